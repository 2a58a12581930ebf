from ..errors import InputError

BETA = 1.2


def lcs_length(a, b):
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(candidate, references, beta=BETA):
    """LCS F-measure; precision and recall are each maximized over references."""
    if not references:
        raise InputError("need at least one reference")
    if not candidate:
        return 0.0
    prec = rec = 0.0
    for ref in references:
        lcs = lcs_length(candidate, ref)
        prec = max(prec, lcs / len(candidate))
        rec = max(rec, lcs / len(ref) if ref else 0.0)
    if prec == 0.0 or rec == 0.0:
        return 0.0
    return (1 + beta ** 2) * prec * rec / (rec + beta ** 2 * prec)


def rouge_l(candidates, references, beta=BETA):
    """Corpus ROUGE-L (mean of per-caption scores) and the per-caption list."""
    if len(candidates) == 0:
        raise InputError("empty candidate set")
    per = [rouge_l_sentence(c, r, beta) for c, r in zip(candidates, references)]
    return sum(per) / len(per), per
