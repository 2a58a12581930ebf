"""Facial expression recognition network, FER-2013 loading and training."""

import copy
import csv
import logging
import pickle
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import CheckpointError, DataError, InputError
from .types import (CELLS_PER_FACE, FACE_ROWS, FACE_SIZE, MAX_FACES, N_CLASSES,
                    ExpressionDistribution, FaceCrop, FaceFeatureBlock)

log = logging.getLogger(__name__)

# FER-2013 label ids: 0 angry, 1 disgust, 2 fear, 3 happy, 4 sad, 5 surprise, 6 neutral.
# Models are trained and emit probabilities in facecap.EMOTIONS order.
FER2013_TO_EMOTION = (4, 5, 2, 0, 1, 3, 6)

TRAIN_DEV_ROWS = 28698  # standard training rows once the all-black ones are removed
DEV_ROWS = 3589


@dataclass
class FerModelConfig:
    """VGG-B with its last conv block and pooling dropped.

    Three pooled blocks take a 48x48 face to 6x6; the fourth block keeps that
    resolution, so the last feature map is 6x6x512.
    """

    blocks: tuple = ((64, 2), (128, 2), (256, 2), (512, 2))
    kernel_size: int = 3
    fc_hidden: tuple = (1024,)
    dropout: float = 0.5
    n_classes: int = N_CLASSES

    def __post_init__(self):
        self.blocks = tuple(tuple(b) for b in self.blocks)
        self.fc_hidden = tuple(self.fc_hidden)

    @property
    def feature_dim(self):
        return self.blocks[-1][0]


class FerNet(nn.Module):
    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = cfg or FerModelConfig()
        layers = []
        in_ch = 1
        n_pooled = len(self.cfg.blocks) - 1
        for b, (out_ch, n_conv) in enumerate(self.cfg.blocks):
            for _ in range(n_conv):
                layers += [nn.Conv2d(in_ch, out_ch, self.cfg.kernel_size, padding=self.cfg.kernel_size // 2),
                           nn.ReLU(inplace=True)]
                in_ch = out_ch
            layers.append(nn.BatchNorm2d(out_ch))
            if b < n_pooled:
                layers.append(nn.MaxPool2d(2))
        self.features = nn.Sequential(*layers)
        side = FACE_SIZE // 2 ** n_pooled
        head = []
        width = in_ch * side * side
        for hidden in self.cfg.fc_hidden:
            head += [nn.Linear(width, hidden), nn.ReLU(inplace=True), nn.Dropout(self.cfg.dropout)]
            width = hidden
        head.append(nn.Linear(width, self.cfg.n_classes))
        self.classifier = nn.Sequential(*head)

    def feature_map(self, x):
        """(B, 1, 48, 48) -> (B, C, 6, 6) output of the last conv block."""
        return self.features(x)

    def forward(self, x):
        return self.classifier(torch.flatten(self.feature_map(x), 1))


def _as_batch(crops):
    arr = np.stack([c.pixels if isinstance(c, FaceCrop) else np.asarray(c) for c in crops])
    if arr.shape[1:] != (FACE_SIZE, FACE_SIZE):
        raise InputError(f"face crops must be {FACE_SIZE}x{FACE_SIZE}, got {arr.shape[1:]}")
    return torch.from_numpy(arr.astype(np.float32)).unsqueeze(1)


@torch.no_grad()
def classify_faces(model, crops):
    if not crops:
        return []
    model.eval()
    logits = model(_as_batch(crops)).double()
    probs = torch.softmax(logits, dim=1).numpy()
    probs /= probs.sum(axis=1, keepdims=True)
    return [ExpressionDistribution(p) for p in probs]


def classify_face(model, crop):
    """Softmax class distribution for a single crop."""
    if not isinstance(crop, FaceCrop):
        raise InputError("classify_face expects a FaceCrop")
    return classify_faces(model, [crop])[0]


@torch.no_grad()
def extract_face_features(model, crops):
    """Stack last-conv features of the (up to) three largest faces into a 108-row block."""
    dim = model.cfg.feature_dim
    crops = list(crops)[:MAX_FACES]
    block = np.zeros((FACE_ROWS, dim), dtype=np.float32)
    if crops:
        model.eval()
        fmap = model.feature_map(_as_batch(crops))  # (n, C, 6, 6)
        n, c = fmap.shape[:2]
        if fmap.shape[2] * fmap.shape[3] != CELLS_PER_FACE:
            raise InputError(f"FER feature map is {tuple(fmap.shape[2:])}, expected 6x6")
        # row-major over the grid: row i*6+j is cell (i, j)
        rows = fmap.permute(0, 2, 3, 1).reshape(n * CELLS_PER_FACE, c)
        block[:n * CELLS_PER_FACE] = rows.numpy()
    return FaceFeatureBlock(block, len(crops), dim)


# --- FER-2013 data -------------------------------------------------------------------------

@dataclass
class FerSplit:
    pixels: np.ndarray  # (N, 48, 48) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64 in EMOTIONS order

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return FerSplit(self.pixels[idx], self.labels[idx])


def read_fer2013(path, map_labels=True):
    """Parse a FER-2013 CSV into ``{usage: FerSplit}``.

    Rows are validated strictly; errors carry the 1-based data row index.
    """
    per_usage = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"emotion", "pixels"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"missing columns {sorted(missing)}")
        for i, row in enumerate(reader, start=1):
            try:
                label = int(row["emotion"])
            except (TypeError, ValueError):
                raise DataError(f"emotion {row['emotion']!r} is not an integer", row=i) from None
            if not 0 <= label < N_CLASSES:
                raise DataError(f"emotion label {label} outside 0..6", row=i)
            try:
                px = np.array(row["pixels"].split(), dtype=np.int64)
            except (AttributeError, ValueError):
                raise DataError("pixels field is not a list of integers", row=i) from None
            if px.size != FACE_SIZE * FACE_SIZE:
                raise DataError(f"expected {FACE_SIZE * FACE_SIZE} pixels, got {px.size}", row=i)
            if px.min() < 0 or px.max() > 255:
                raise DataError("pixel values outside 0..255", row=i)
            usage = (row.get("Usage") or "Training").strip()
            if map_labels:
                label = FER2013_TO_EMOTION[label]
            per_usage.setdefault(usage, ([], []))
            per_usage[usage][0].append(px.reshape(FACE_SIZE, FACE_SIZE).astype(np.uint8))
            per_usage[usage][1].append(label)
    return {
        usage: FerSplit(np.stack(px).astype(np.float32) / 255.0, np.array(lab, dtype=np.int64))
        for usage, (px, lab) in per_usage.items()
    }


def drop_black(split):
    """Remove rows whose every pixel is zero."""
    keep = split.pixels.reshape(len(split), -1).max(axis=1) > 0
    return split.subset(np.flatnonzero(keep))


def prepare_fer_splits(splits, seed=0, dev_size=None):
    """Filter the Training rows and carve out a development split.

    Returns ``(train, dev, private_test)``. The development size defaults to
    3589 of 28,698 rows, scaled proportionally for smaller files.
    """
    if "Training" not in splits:
        raise DataError("no rows with Usage == Training")
    full = drop_black(splits["Training"])
    n = len(full)
    if dev_size is None:
        dev_size = int(round(n * DEV_ROWS / TRAIN_DEV_ROWS))
    if not 0 < dev_size < n:
        raise DataError(f"cannot carve {dev_size} development rows out of {n}")
    order = np.random.default_rng(seed).permutation(n)
    dev = full.subset(np.sort(order[:dev_size]))
    train = full.subset(np.sort(order[dev_size:]))
    test = splits.get("PrivateTest")
    return train, dev, test


@dataclass
class FerTrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    augment: bool = False


@dataclass
class FerModel:
    """A trained FER network plus its training report."""

    net: FerNet
    report: dict = field(default_factory=dict)

    @property
    def cfg(self):
        return self.net.cfg

    def feature_map(self, x):
        return self.net.feature_map(x)

    def __call__(self, x):
        return self.net(x)

    def eval(self):
        self.net.eval()
        return self


@torch.no_grad()
def accuracy(model, split, batch_size=256):
    if split is None or len(split) == 0:
        return float("nan")
    net = model.net if isinstance(model, FerModel) else model
    net.eval()
    correct = 0
    for i in range(0, len(split), batch_size):
        x = torch.from_numpy(split.pixels[i:i + batch_size]).unsqueeze(1)
        correct += (net(x).argmax(1).numpy() == split.labels[i:i + batch_size]).sum()
    return correct / len(split)


def train_fer(train, val, cfg=None, train_cfg=None, test=None):
    """Cross-entropy training with Adam; keeps the best development-accuracy weights."""
    cfg = cfg or FerModelConfig()
    train_cfg = train_cfg or FerTrainConfig()
    if len(train) == 0:
        raise DataError("empty FER training split")
    torch.manual_seed(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    random.seed(train_cfg.seed)
    net = FerNet(cfg)
    opt = torch.optim.Adam(net.parameters(), lr=train_cfg.lr)
    best_state, best_acc = copy.deepcopy(net.state_dict()), -1.0
    history = []
    for epoch in range(1, train_cfg.epochs + 1):
        net.train()
        order = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(order), train_cfg.batch_size):
            idx = order[i:i + train_cfg.batch_size]
            x = torch.from_numpy(train.pixels[idx]).unsqueeze(1)
            if train_cfg.augment:
                flip = torch.from_numpy(rng.random(len(idx)) < 0.5)
                x[flip] = x[flip].flip(-1)
            y = torch.from_numpy(train.labels[idx])
            loss = F.cross_entropy(net(x), y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        train_loss = total / len(train)
        val_acc = accuracy(net, val) if val is not None and len(val) else accuracy(net, train)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_accuracy": float(val_acc)})
        log.info("fer epoch %d loss %.4f val acc %.4f", epoch, train_loss, val_acc)
        if val_acc > best_acc:
            best_acc, best_state = val_acc, copy.deepcopy(net.state_dict())
    net.load_state_dict(best_state)
    net.eval()
    report = {"history": history, "best_val_accuracy": float(best_acc)}
    if test is not None:
        report["private_test_accuracy"] = float(accuracy(net, test))
    return FerModel(net, report)


def save_fer(model, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save({"kind": "fer", "config": asdict(model.cfg), "state_dict": model.net.state_dict(),
                "report": model.report}, path)


def load_fer(path):
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"cannot read FER checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("kind") != "fer":
        raise CheckpointError(f"{path} is not a FER checkpoint")
    net = FerNet(FerModelConfig(**blob["config"]))
    net.load_state_dict(blob["state_dict"])
    net.eval()
    return FerModel(net, blob.get("report", {}))
