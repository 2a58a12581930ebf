from dataclasses import dataclass, field

from ..data import tokenize
from ..errors import InputError
from .bleu import bleu
from .cider import cider
from .external import external_metric
from .rouge import rouge_l

NATIVE = ("bleu", "rougeL", "cider")
EXTERNAL = ("meteor", "spice")


@dataclass
class EvalReport:
    scores: dict = field(default_factory=dict)
    per_image: dict = field(default_factory=dict)
    external: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def to_dict(self):
        return {"scores": self.scores, "per_image": self.per_image, "external": self.external,
                "counts": self.counts}


def evaluate(candidates, references, metrics=NATIVE, commands=None):
    """Score ``{image_id: caption}`` against ``{image_id: [captions]}``."""
    unknown = set(metrics) - set(NATIVE) - set(EXTERNAL)
    if unknown:
        raise InputError(f"unknown metrics {sorted(unknown)}")
    missing = set(candidates) - set(references)
    if missing:
        raise InputError(f"{len(missing)} candidates have no references, e.g. {sorted(missing)[:3]}")
    ids = sorted(candidates)
    if not ids:
        raise InputError("empty candidate set")
    cand = [tokenize(candidates[i]) for i in ids]
    refs = [[tokenize(r) for r in references[i]] for i in ids]
    report = EvalReport(counts={"images": len(ids), "references": sum(len(r) for r in refs)})
    if "bleu" in metrics:
        for n, s in enumerate(bleu(cand, refs), start=1):
            report.scores[f"bleu{n}"] = s
    if "rougeL" in metrics:
        score, per = rouge_l(cand, refs)
        report.scores["rougeL"] = score
        report.per_image["rougeL"] = dict(zip(ids, per))
    if "cider" in metrics:
        score, per = cider(cand, refs)
        report.scores["cider"] = score
        report.per_image["cider"] = dict(zip(ids, per))
    for name in EXTERNAL:
        if name in metrics:
            res = external_metric(name, {i: candidates[i] for i in ids}, {i: list(references[i]) for i in ids},
                                  command=(commands or {}).get(name))
            report.external[name] = res.to_dict()
            if res.available:
                report.scores[name] = res.score
    return report
