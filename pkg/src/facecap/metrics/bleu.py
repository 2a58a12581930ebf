import math

from ..errors import InputError
from .ngrams import ngram_counts


def _closest_ref_len(cand_len, ref_lens):
    return min(ref_lens, key=lambda r: (abs(r - cand_len), r))


def bleu(candidates, references, n_max=4):
    """Corpus BLEU-1..n_max over token lists.

    Modified n-gram precisions are pooled over the corpus; the brevity penalty
    uses, per candidate, the reference length closest to it (shorter on ties).
    Returns a list ``[BLEU-1, ..., BLEU-n_max]``.
    """
    if len(candidates) == 0:
        raise InputError("empty candidate set")
    if len(candidates) != len(references):
        raise InputError("candidates and references differ in length")
    matched = [0] * n_max
    possible = [0] * n_max
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise InputError("each candidate needs at least one reference")
        cand_len += len(cand)
        ref_len += _closest_ref_len(len(cand), [len(r) for r in refs])
        for n in range(1, n_max + 1):
            counts = ngram_counts(cand, n)
            max_ref = {}
            for r in refs:
                for g, c in ngram_counts(r, n).items():
                    if c > max_ref.get(g, 0):
                        max_ref[g] = c
            matched[n - 1] += sum(min(c, max_ref.get(g, 0)) for g, c in counts.items())
            possible[n - 1] += max(len(cand) - n + 1, 0)
    if cand_len == 0:
        return [0.0] * n_max
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    scores = []
    log_sum = 0.0
    for n in range(n_max):
        if matched[n] == 0 or possible[n] == 0:
            # every higher order is zero too once a precision vanishes
            scores.extend([0.0] * (n_max - n))
            break
        log_sum += math.log(matched[n] / possible[n])
        scores.append(bp * math.exp(log_sum / (n + 1)))
    return scores
