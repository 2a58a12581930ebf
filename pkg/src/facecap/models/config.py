from dataclasses import asdict, dataclass, fields

from ..errors import InputError

VARIANTS = (
    "show-att-tell", "up-down", "step-inject", "init-flow",
    "face-cap-repeat", "face-cap-memory", "dual-face-att", "joint-face-att",
)
FACECAP_FAMILY = ("show-att-tell", "step-inject", "init-flow", "face-cap-repeat", "face-cap-memory")
JOINT_FAMILY = ("up-down", "joint-face-att")
FACE_LOSS_VARIANTS = ("face-cap-repeat", "face-cap-memory")
INJECT_VARIANTS = ("face-cap-repeat", "step-inject")
MEMORY_INIT_VARIANTS = ("face-cap-memory", "init-flow")
INIT_SOURCES = ("encoding", "visual-mean")


@dataclass
class ModelConfig:
    variant: str
    vocab_size: int
    embed_dim: int = None  # 300, or 512 for the two-LSTM attend/language models
    hidden_dim: int = 512
    att_dim: int = 512
    visual_dim: int = 512
    face_dim: int = 512
    n_classes: int = 7
    lam: float = 0.8
    beta1: float = 0.2
    beta2: float = 0.4
    face_loss_weight: float = None  # 1.0 for face-cap-repeat/-memory, 0 otherwise
    face_head_hidden: int = None
    init_source: str = None  # facecap family: "encoding" or "visual-mean"
    inject_encoding: bool = None  # facecap family: feed s to every LSTM step
    mask_face_padding: bool = False
    embed_init: float = 0.08

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InputError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.embed_dim is None:
            self.embed_dim = 512 if self.variant in JOINT_FAMILY else 300
        if self.face_loss_weight is None:
            self.face_loss_weight = 1.0 if self.variant in FACE_LOSS_VARIANTS else 0.0
        if self.face_head_hidden is None:
            self.face_head_hidden = self.hidden_dim
        if self.variant in FACECAP_FAMILY:
            if self.init_source is None:
                self.init_source = "visual-mean" if self.variant == "show-att-tell" else "encoding"
            if self.inject_encoding is None:
                self.inject_encoding = self.variant in INJECT_VARIANTS
            if self.init_source not in INIT_SOURCES:
                raise InputError(f"init_source must be one of {INIT_SOURCES}")
        elif self.init_source is not None or self.inject_encoding:
            raise InputError(f"{self.variant} takes no facial encoding options")
        if self.face_loss_weight < 0:
            raise InputError("face_loss_weight must be >= 0")
        if self.face_loss_weight and self.variant not in FACE_LOSS_VARIANTS:
            raise InputError(f"{self.variant} has no face objective")
        if not 0.0 <= self.lam <= 1.0:
            raise InputError("lam must lie in [0, 1]")
        for name in ("vocab_size", "embed_dim", "hidden_dim", "att_dim", "visual_dim", "face_dim"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be positive")

    @property
    def has_face_head(self):
        return self.variant in FACE_LOSS_VARIANTS

    @property
    def memory_init(self):
        return self.variant in MEMORY_INIT_VARIANTS and self.init_source == "encoding"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, blob):
        known = {f.name for f in fields(cls)}
        unknown = set(blob) - known
        if unknown:
            raise InputError(f"unknown model config keys {sorted(unknown)}")
        return cls(**blob)
