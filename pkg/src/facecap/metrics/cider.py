"""CIDEr-D: TF-IDF weighted n-gram cosine with clipping and a Gaussian length penalty."""

import logging
import math
from collections import defaultdict

from ..errors import InputError
from .ngrams import ngram_counts

log = logging.getLogger(__name__)

SIGMA = 6.0


def _vectors(tokens, df, log_n_docs, n_max):
    vecs, norms = [], []
    for n in range(1, n_max + 1):
        vec = {g: tf * (log_n_docs - math.log(max(1.0, df[g]))) for g, tf in ngram_counts(tokens, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider(candidates, references, n_max=4, sigma=SIGMA):
    """Corpus CIDEr-D (x10) and the per-image list.

    Document frequencies come from the reference sets of this corpus.
    """
    if len(candidates) == 0:
        raise InputError("empty candidate set")
    if len(candidates) < 2:
        log.warning("CIDEr on a single image: IDF weights are degenerate")
    df = defaultdict(float)
    for refs in references:
        seen = set()
        for r in refs:
            for n in range(1, n_max + 1):
                seen.update(ngram_counts(r, n))
        for g in seen:
            df[g] += 1.0
    log_n = math.log(float(len(references)))
    per = []
    for cand, refs in zip(candidates, references):
        cv, cn = _vectors(cand, df, log_n, n_max)
        total = [0.0] * n_max
        for r in refs:
            rv, rn = _vectors(r, df, log_n, n_max)
            delta = len(cand) - len(r)
            penalty = math.exp(-(delta ** 2) / (2 * sigma ** 2))
            for n in range(n_max):
                val = sum(min(w, rv[n].get(g, 0.0)) * rv[n].get(g, 0.0) for g, w in cv[n].items())
                if cn[n] != 0 and rn[n] != 0:
                    val /= cn[n] * rn[n]
                total[n] += val * penalty
        per.append(10.0 * sum(total) / n_max / len(refs))
    return sum(per) / len(per), per
