"""Manifest handling, dataset splits, tokenization and vocabulary."""

import json
import logging
import re
from collections import Counter
from pathlib import Path

import numpy as np

from .errors import DataError, InputError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_SPLIT = (8696, 2000, 1000)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_TOKEN = re.compile(r"[^\W_]+(?:['\-][^\W_]+)*")


def tokenize(caption):
    """Lowercase word tokens; apostrophes and hyphens survive only inside words."""
    return _TOKEN.findall(caption.lower())


# --- manifests ------------------------------------------------------------------------------

def read_manifest(path):
    records = []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON: {exc.msg}", row=i) from None
            validate_record(rec, row=i)
            records.append(rec)
    return records


def validate_record(rec, row=None):
    if not isinstance(rec, dict):
        raise DataError("manifest entry is not an object", row=row)
    for key in ("image_id", "captions"):
        if key not in rec:
            raise DataError(f"missing field {key!r}", row=row)
    caps = rec["captions"]
    if not isinstance(caps, list) or not caps or not all(isinstance(c, str) and c.strip() for c in caps):
        raise DataError("captions must be a non-empty list of non-empty strings", row=row)
    if "split" in rec and rec["split"] not in SPLITS:
        raise DataError(f"split {rec['split']!r} not in {SPLITS}", row=row)


def write_manifest(records, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def resolve_path(rec, root=None):
    p = Path(rec["path"])
    if root is not None and not p.is_absolute():
        p = Path(root) / p
    return p


def build_face_subset(records, detector, root=None):
    """Keep images where the detector finds at least one face.

    Unreadable images are skipped with a warning. Returns ``(kept, n_skipped)``.
    """
    from .features.faces import detect_faces

    kept, skipped = [], 0
    for rec in records:
        path = resolve_path(rec, root)
        if not path.exists():
            log.warning("%s: image file %s missing, skipped", rec["image_id"], path)
            skipped += 1
            continue
        try:
            crops = detect_faces(path, detector, image_id=rec["image_id"])
        except InputError as exc:
            log.warning("%s: %s, skipped", rec["image_id"], exc)
            skipped += 1
            continue
        if crops:
            kept.append({**rec, "n_faces": len(crops)})
    if skipped:
        log.warning("build_face_subset: %d images skipped", skipped)
    return kept, skipped


def split_sizes(n, proportions=DEFAULT_SPLIT):
    """Largest-remainder apportionment of ``n`` items over the proportions."""
    total = sum(proportions)
    quotas = [n * p / total for p in proportions]
    sizes = [int(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_dataset(records, seed, proportions=DEFAULT_SPLIT):
    """Tag every record with train/val/test in the 8696:2000:1000 ratio."""
    if len(records) < 3:
        raise InputError("need at least 3 items to split")
    sizes = split_sizes(len(records), proportions)
    order = np.random.default_rng(seed).permutation(len(records))
    tags = [None] * len(records)
    start = 0
    for name, size in zip(SPLITS, sizes):
        for j in order[start:start + size]:
            tags[j] = name
        start += size
    return [{**rec, "split": tag} for rec, tag in zip(records, tags)]


# --- vocabulary -----------------------------------------------------------------------------

class Vocabulary:
    def __init__(self, tokens, min_count=1):
        tokens = list(tokens)
        if tokens[:len(RESERVED)] != list(RESERVED):
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        if len(self.stoi) != len(self.itos):
            raise InputError("duplicate tokens in vocabulary")
        self.min_count = min_count

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids, strip=True):
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def to_json(self):
        return {"tokens": self.itos, "min_count": self.min_count}

    @classmethod
    def from_json(cls, blob):
        return cls(blob["tokens"], blob.get("min_count", 1))

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def build_vocabulary(records, min_count=5):
    """Vocabulary over training-split captions, ordered by (-frequency, token)."""
    if min_count < 1:
        raise InputError("min_count must be >= 1")
    train = [r for r in records if r.get("split", "train") == "train"]
    if not train:
        raise InputError("no training captions to build a vocabulary from")
    counts = Counter(t for r in train for c in r["captions"] for t in tokenize(c))
    kept = sorted((t for t, n in counts.items() if n >= min_count and t not in RESERVED),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept, min_count)
