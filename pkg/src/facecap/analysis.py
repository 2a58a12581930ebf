"""Verb-distribution statistics and emotion-lexicon lookups over caption corpora."""

import logging
import math
import os
import shlex
import subprocess
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .data import tokenize
from .errors import EnvironmentUnavailable, InputError

log = logging.getLogger(__name__)

VERB_TAGS = {"VB", "VBD", "VBG", "VBN", "VBP", "VBZ"}
LEXICON_LABELS = ("anger", "anticipation", "disgust", "fear", "joy", "negative", "positive",
                  "sadness", "surprise", "trust")
TAGGER_ENV = "FACECAP_TAGGER_CMD"
QUERY_VERBS = ("smiling", "looking", "singing", "reading", "eating", "laughing")

_AUX = {"is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does", "did"}
_KNOWN_VERBS = {
    "sits", "stands", "walks", "runs", "plays", "holds", "looks", "smiles", "laughs", "wears", "rides",
    "eats", "reads", "sings", "talks", "watches", "waits", "poses", "jumps", "dances", "cooks", "works",
    "sit", "stand", "walk", "run", "play", "hold", "look", "smile", "laugh", "wear", "ride", "eat", "read",
    "sing", "talk", "watch", "wait", "pose", "jump", "dance", "cook", "work", "cries", "cry", "frowns",
    "frown", "screams", "scream", "sat", "stood", "held", "wore", "rode", "ate", "sang", "ran", "dressed",
    "covered", "seated", "surrounded", "gathered", "painted", "smiled", "laughed", "looked",
}
_ING_NOUNS = {
    "building", "clothing", "ceiling", "something", "nothing", "anything", "everything", "morning",
    "evening", "string", "king", "ring", "spring", "thing", "wedding", "painting", "railing", "sibling",
    "awning", "bedding", "pudding", "stocking", "swing", "wing", "sling", "sing", "bring", "during",
}


def heuristic_tags(tokens):
    """Crude verb tagger for when no external tagger is configured."""
    tags = []
    for tok in tokens:
        if tok in _AUX:
            tags.append("VBZ" if tok in ("is", "has", "does") else "VBP")
        elif tok in _KNOWN_VERBS:
            tags.append("VBZ" if tok.endswith("s") else "VB")
        elif tok.endswith("ing") and len(tok) > 4 and tok not in _ING_NOUNS:
            tags.append("VBG")
        else:
            tags.append("NN")
    return tags


class CommandTagger:
    """External POS tagger: one caption per stdin line, ``word_TAG`` tokens per stdout line."""

    def __init__(self, command, timeout=600):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def __call__(self, captions):
        text = "\n".join(" ".join(toks) for toks in captions) + "\n"
        try:
            proc = subprocess.run(self.argv, input=text, capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise EnvironmentUnavailable(f"tagger failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise EnvironmentUnavailable(f"tagger exited with {proc.returncode}: {proc.stderr.strip()[:200]}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != len(captions):
            raise EnvironmentUnavailable(f"tagger returned {len(lines)} lines for {len(captions)} captions")
        out = []
        for ln in lines:
            pairs = []
            for item in ln.split():
                word, sep, tag = item.rpartition("_")
                if not sep:
                    raise EnvironmentUnavailable(f"tagger output token {item!r} lacks a _TAG suffix")
                pairs.append((word, tag))
            out.append(pairs)
        return out


def default_tagger(command=None):
    """``CommandTagger`` from ``command`` or ``FACECAP_TAGGER_CMD``; None when neither is set."""
    command = command or os.environ.get(TAGGER_ENV)
    return CommandTagger(command) if command else None


@dataclass
class VerbDistribution:
    counts: Counter = field(default_factory=Counter)
    fallback: bool = False
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.counts = Counter({k: v for k, v in self.counts.items() if v > 0})

    @property
    def total(self):
        return sum(self.counts.values())

    def probabilities(self):
        total = self.total
        return {v: c / total for v, c in self.counts.items()}

    def to_dict(self):
        return {"counts": dict(sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))),
                "total": self.total, "fallback": self.fallback, "warnings": self.warnings}


def _as_tokens(captions):
    return [tokenize(c) if isinstance(c, str) else list(c) for c in captions]


def extract_verbs(captions, tagger=None):
    """Count lowercased verb tokens (any VB* tag) over the corpus.

    ``tagger`` maps a list of token lists to lists of ``(word, tag)`` pairs.
    If it is missing or fails, the heuristic tagger is used and the result is
    flagged.
    """
    toks = _as_tokens(captions)
    dist = VerbDistribution()
    tagged = None
    if tagger is not None and toks:
        try:
            tagged = tagger(toks)
        except EnvironmentUnavailable as exc:
            log.warning("tagger failed, using heuristic tags: %s", exc)
            dist.warnings.append(str(exc))
    if tagged is None:
        dist.fallback = True
        tagged = [list(zip(t, heuristic_tags(t))) for t in toks]
    for sent in tagged:
        for word, tag in sent:
            if tag in VERB_TAGS:
                dist.counts[word.lower()] += 1
    return dist


def verb_entropy(dist):
    """Shannon entropy in bits of the maximum-likelihood verb distribution."""
    counts = dist.counts if isinstance(dist, VerbDistribution) else Counter(dist)
    total = sum(counts.values())
    if total < 1:
        raise InputError("entropy of an empty verb distribution is undefined")
    h = 0.0
    for c in counts.values():
        p = c / total
        h -= p * math.log2(p)
    return h + 0.0  # normalizes -0.0


def ranked(counts):
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def top4_mass(dist, k=4):
    """Probability mass of the ``k`` most frequent verbs.

    Returns ``(mass, verbs, complete)``; ``complete`` is False when fewer than
    ``k`` distinct verbs exist.
    """
    counts = dist.counts if isinstance(dist, VerbDistribution) else Counter(dist)
    total = sum(counts.values())
    if total == 0:
        return 0.0, [], False
    top = ranked(counts)[:k]
    return sum(c for _, c in top) / total, [v for v, _ in top], len(counts) >= k


def verb_ranks(dist):
    """Dense 1-based ranks by descending count; equal counts share a rank."""
    counts = dist.counts if isinstance(dist, VerbDistribution) else Counter(dist)
    ranks, rank, last = {}, 0, None
    for verb, c in ranked(counts):
        if c != last:
            rank += 1
            last = c
        ranks[verb] = rank
    return ranks


def verb_rank(dist, verbs):
    """Rank per queried verb, ``None`` (reported as n/a) when the verb never occurs."""
    ranks = verb_ranks(dist)
    return {v: ranks.get(v) for v in verbs}


def load_lexicon(path):
    """Read the NRC word-emotion lexicon (``word<TAB>emotion<TAB>0|1``)."""
    path = Path(path)
    if not path.exists():
        raise EnvironmentUnavailable(f"emotion lexicon {path} not found")
    lex = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            parts = line.strip().split("\t")
            if len(parts) != 3:
                continue
            word, label, flag = parts
            if label not in LEXICON_LABELS:
                raise InputError(f"{path}:{i}: unknown lexicon label {label!r}")
            lex.setdefault(word, set())
            if flag.strip() == "1":
                lex[word].add(label)
    return {w: labels for w, labels in lex.items() if labels}


def lexicon_intersect(counts, lexicon):
    """Corpus words found in the lexicon, most frequent first, with their labels."""
    if isinstance(counts, VerbDistribution):
        counts = counts.counts
    elif not isinstance(counts, Counter):
        counts = Counter(t for toks in _as_tokens(counts) for t in toks)
    hits = {w: c for w, c in counts.items() if w in lexicon}
    return [{"word": w, "count": c, "rank": i, "labels": sorted(lexicon[w])}
            for i, (w, c) in enumerate(ranked(hits), start=1)]


def verb_report(captions, tagger=None, lexicon=None, query_verbs=QUERY_VERBS):
    dist = extract_verbs(captions, tagger)
    report = {"verbs": dist.to_dict()}
    if dist.total:
        mass, top, complete = top4_mass(dist)
        report.update(entropy=verb_entropy(dist), top4={"mass": mass, "verbs": top, "complete": complete})
    else:
        report.update(entropy=None, top4=None)
    report["ranks"] = {v: (r if r is not None else "n/a") for v, r in verb_rank(dist, query_verbs).items()}
    if lexicon is not None:
        report["lexicon"] = lexicon_intersect(captions, lexicon)
    return report
