"""Checkpoint container: parameter tensors, model config, vocabulary tokens."""

import pickle
from pathlib import Path

import torch

from ..data import Vocabulary
from ..errors import CheckpointError
from .captioners import build_model
from .config import VARIANTS, ModelConfig


def save_checkpoint(path, model, vocab=None, extra=None):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "kind": "captioner",
        "variant": model.cfg.variant,
        "config": model.cfg.to_dict(),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "vocab": None if vocab is None else vocab.to_json(),
        "extra": extra or {},
    }
    torch.save(blob, path)


def load_checkpoint(path, variant=None, vocab=None):
    """Rebuild a model; ``variant`` and ``vocab`` are checked against the stored ones."""
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("kind") != "captioner":
        raise CheckpointError(f"{path} is not a captioner checkpoint")
    cfg = ModelConfig.from_dict(blob["config"])
    if blob["variant"] != cfg.variant or cfg.variant not in VARIANTS:
        raise CheckpointError(f"{path}: inconsistent variant {blob['variant']!r}")
    if variant is not None and variant != cfg.variant:
        raise CheckpointError(f"{path} holds {cfg.variant}, expected {variant}")
    stored_vocab = Vocabulary.from_json(blob["vocab"]) if blob.get("vocab") else None
    if vocab is not None:
        if len(vocab) != cfg.vocab_size or (stored_vocab is not None and stored_vocab.itos != vocab.itos):
            raise CheckpointError(f"{path}: vocabulary does not match the checkpoint")
    elif stored_vocab is not None and len(stored_vocab) != cfg.vocab_size:
        raise CheckpointError(f"{path}: stored vocabulary size differs from the model")
    model = build_model(cfg)
    try:
        model.load_state_dict(blob["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    model.eval()
    return model, vocab or stored_vocab, blob.get("extra", {})
