"""Value types produced by the feature-extraction stage."""

from dataclasses import dataclass, field

import numpy as np

from .. import EMOTIONS
from ..errors import InputError

FACE_SIZE = 48
N_CLASSES = len(EMOTIONS)
MAX_FACES = 3
CELLS_PER_FACE = 36
FACE_ROWS = MAX_FACES * CELLS_PER_FACE


@dataclass
class FaceCrop:
    image_id: str
    box: tuple  # (x, y, w, h) in source pixels
    pixels: np.ndarray  # 48x48 grayscale in [0, 1]

    def __post_init__(self):
        self.box = tuple(int(v) for v in self.box)
        if len(self.box) != 4 or self.box[2] <= 0 or self.box[3] <= 0:
            raise InputError(f"invalid face box {self.box}")
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.shape != (FACE_SIZE, FACE_SIZE):
            raise InputError(f"face crop must be {FACE_SIZE}x{FACE_SIZE}, got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise InputError("face crop pixels must lie in [0, 1]")
        self.pixels = px

    @property
    def area(self):
        return self.box[2] * self.box[3]


@dataclass
class ExpressionDistribution:
    """Per-face class probabilities in EMOTIONS order."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (N_CLASSES,):
            raise InputError(f"expression distribution must have {N_CLASSES} entries, got {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise InputError("expression probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-6:
            raise InputError(f"expression probabilities sum to {p.sum()}, not 1")
        self.probs = p

    @property
    def label(self):
        return EMOTIONS[int(np.argmax(self.probs))]


@dataclass
class FacialEncoding:
    onehot: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.onehot, dtype=np.float32)
        if v.shape != (N_CLASSES,) or not np.all((v == 0) | (v == 1)) or v.sum() != 1:
            raise InputError(f"facial encoding must be one-hot of length {N_CLASSES}")
        self.onehot = v

    @classmethod
    def from_index(cls, index):
        v = np.zeros(N_CLASSES, dtype=np.float32)
        v[index] = 1.0
        return cls(v)

    @property
    def index(self):
        return int(np.argmax(self.onehot))

    @property
    def label(self):
        return EMOTIONS[self.index]


@dataclass
class FaceFeatureBlock:
    feats: np.ndarray
    n_faces: int = 0
    dim: int = field(default=512, repr=False)

    def __post_init__(self):
        f = np.asarray(self.feats, dtype=np.float32)
        if f.shape != (FACE_ROWS, self.dim):
            raise InputError(f"face feature block must be {FACE_ROWS}x{self.dim}, got {f.shape}")
        if not 0 <= self.n_faces <= MAX_FACES:
            raise InputError(f"n_faces must be in 0..{MAX_FACES}")
        if np.any(f[CELLS_PER_FACE * self.n_faces:] != 0):
            raise InputError("rows beyond the detected faces must be zero")
        self.feats = f

    @classmethod
    def empty(cls, dim=512):
        return cls(np.zeros((FACE_ROWS, dim), dtype=np.float32), 0, dim)


@dataclass
class VisualFeatureMap:
    feats: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.feats, dtype=np.float32)
        if f.ndim != 2:
            raise InputError(f"visual features must be K x D, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise InputError("visual features contain non-finite values")
        self.feats = f

    @property
    def shape(self):
        return self.feats.shape
