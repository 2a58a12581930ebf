"""Turn manifests plus feature artifacts into model batches."""

from dataclasses import dataclass

import numpy as np
import torch

from .data import BOS, EOS, PAD, tokenize
from .features.store import load_features


@dataclass
class Example:
    image_id: str
    visual: np.ndarray
    faces: np.ndarray
    n_faces: int
    encoding: np.ndarray
    tokens: list  # caption ids without BOS/EOS; empty at inference


class FeatureCache:
    """Loads feature artifacts on demand; keeps them in memory when ``keep`` is set."""

    def __init__(self, feature_dir, keep=True):
        self.feature_dir = feature_dir
        self.keep = keep
        self._cache = {}

    def __call__(self, image_id):
        if image_id in self._cache:
            return self._cache[image_id]
        feats = load_features(self.feature_dir, image_id)
        if self.keep:
            self._cache[image_id] = feats
        return feats


def make_examples(records, features, vocab, split=None, captions_per_image=None, max_len=None):
    """One example per (image, reference) pair."""
    out = []
    for rec in records:
        if split is not None and rec.get("split") != split:
            continue
        f = features(rec["image_id"])
        caps = rec["captions"] if captions_per_image is None else rec["captions"][:captions_per_image]
        for cap in caps:
            ids = vocab.encode(tokenize(cap))
            if max_len is not None:
                ids = ids[:max_len]
            if ids:
                out.append(Example(rec["image_id"], f.visual.feats, f.faces.feats, f.n_faces,
                                   f.encoding.onehot, ids))
    return out


def image_examples(records, features, split=None):
    """One caption-less example per image, for decoding."""
    out = []
    for rec in records:
        if split is not None and rec.get("split") != split:
            continue
        f = features(rec["image_id"])
        out.append(Example(rec["image_id"], f.visual.feats, f.faces.feats, f.n_faces, f.encoding.onehot, []))
    return out


def collate(examples, dtype=torch.float32):
    longest = max(len(e.tokens) for e in examples) + 2
    tokens = torch.full((len(examples), longest), PAD, dtype=torch.long)
    for i, e in enumerate(examples):
        seq = [BOS] + list(e.tokens) + [EOS]
        tokens[i, :len(seq)] = torch.tensor(seq)
    return {
        "visual": torch.from_numpy(np.stack([e.visual for e in examples])).to(dtype),
        "faces": torch.from_numpy(np.stack([e.faces for e in examples])).to(dtype),
        "n_faces": torch.tensor([e.n_faces for e in examples], dtype=torch.long),
        "encoding": torch.from_numpy(np.stack([e.encoding for e in examples])).to(dtype),
        "tokens": tokens,
        "image_ids": [e.image_id for e in examples],
    }


def batches(examples, batch_size, generator=None):
    if generator is not None:
        order = torch.randperm(len(examples), generator=generator).tolist()
    else:
        order = list(range(len(examples)))
    for i in range(0, len(order), batch_size):
        yield collate([examples[j] for j in order[i:i + batch_size]])
