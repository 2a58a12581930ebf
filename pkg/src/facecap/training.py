"""Training loop with plateau learning-rate halving and best-checkpoint reloads."""

import copy
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import torch

from .batching import batches, collate
from .data import Vocabulary
from .decoding import greedy_decode
from .errors import InputError, NumericError
from .metrics import bleu
from .metrics.external import external_metric

log = logging.getLogger(__name__)

TWO_LSTM_VARIANTS = ("up-down", "joint-face-att")


@dataclass
class TrainConfig:
    batch_size: int = None  # 100, or 64 for the two-LSTM attend/language models
    lr0: float = None  # 1e-3, or 5e-3 for the two-LSTM attend/language models
    min_lr: float = 1e-4
    patience: int = 2
    epoch_limit: int = 30
    seed: int = 0
    selection_metric: str = "meteor"
    fallback_metric: str = "bleu4"
    clip_norm: float = 5.0  # <= 0 disables clipping
    max_len: int = 20
    val_batch_size: int = 100

    def resolve(self, variant):
        """Fill variant-dependent defaults and validate."""
        two = variant in TWO_LSTM_VARIANTS
        cfg = copy.copy(self)
        if cfg.batch_size is None:
            cfg.batch_size = 64 if two else 100
        if cfg.lr0 is None:
            cfg.lr0 = 5e-3 if two else 1e-3
        if cfg.min_lr > cfg.lr0:
            raise InputError("min_lr must not exceed lr0")
        if cfg.patience < 1:
            raise InputError("patience must be >= 1")
        if cfg.batch_size < 1 or cfg.epoch_limit < 1:
            raise InputError("batch_size and epoch_limit must be positive")
        return cfg

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, blob):
        unknown = set(blob) - {f.name for f in fields(cls)}
        if unknown:
            raise InputError(f"unknown train config keys {sorted(unknown)}")
        return cls(**blob)


class PlateauHalving:
    """Halve the learning rate after ``patience`` epochs without a new best metric.

    ``step`` returns True when a decay (and best-checkpoint reload) is due.
    The counter restarts after every decay.
    """

    def __init__(self, lr0, min_lr=1e-4, patience=2):
        self.lr = lr0
        self.min_lr = min_lr
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.stale = 0
        self.epoch = 0

    def step(self, metric):
        self.epoch += 1
        if metric > self.best:
            self.best, self.best_epoch, self.stale = metric, self.epoch, 0
            return False
        self.stale += 1
        if self.stale >= self.patience:
            self.stale = 0
            self.lr = max(self.lr / 2.0, self.min_lr)
            return True
        return False


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)

    def add(self, **entry):
        self.epochs.append(entry)

    @property
    def lrs(self):
        return [e["lr"] for e in self.epochs]

    @property
    def reload_epochs(self):
        return [e["epoch"] for e in self.epochs if e["reloaded"]]

    def to_dict(self):
        return {"epochs": self.epochs}


def validation_score(model, val_examples, vocab, cfg, metric_name):
    """Validation score, higher is better.

    ``meteor``/``bleuN`` score greedy captions per image; ``loss`` (negated mean
    teacher-forced loss) and ``token_accuracy`` score the reference captions directly.
    """
    if metric_name in ("loss", "token_accuracy"):
        return teacher_forced_score(model, val_examples, metric_name, cfg.val_batch_size), metric_name
    by_image = {}
    for ex in val_examples:
        by_image.setdefault(ex.image_id, []).append(ex)
    ids = sorted(by_image)
    cands, refs = {}, {}
    for i in range(0, len(ids), cfg.val_batch_size):
        chunk = ids[i:i + cfg.val_batch_size]
        batch = collate([by_image[k][0] for k in chunk])
        for k, dec in zip(chunk, greedy_decode(model, batch, cfg.max_len)):
            cands[k] = vocab.decode(dec.tokens)
    for k in ids:
        refs[k] = [vocab.decode(ex.tokens) for ex in by_image[k]]
    if metric_name == "meteor":
        result = external_metric("meteor", {k: " ".join(v) for k, v in cands.items()},
                                 {k: [" ".join(r) for r in v] for k, v in refs.items()})
        if result.available:
            return result.score, "meteor"
        metric_name = cfg.fallback_metric
    if metric_name.startswith("bleu"):
        n = int(metric_name[-1]) if metric_name[-1].isdigit() else 4
        return bleu([cands[k] for k in ids], [refs[k] for k in ids])[n - 1], metric_name
    raise InputError(f"unsupported selection metric {metric_name!r}")


def _snapshot(model, opt):
    return copy.deepcopy(model.state_dict()), copy.deepcopy(opt.state_dict())


def train(model, train_examples, val_examples, vocab, cfg=None, on_epoch=None):
    """Adam training with plateau halving; returns ``(best_state_dict, TrainLog)``.

    ``model`` is left holding the best weights.
    """
    if not train_examples:
        raise InputError("no training examples")
    cfg = (cfg or TrainConfig()).resolve(model.cfg.variant)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr0)
    sched = PlateauHalving(cfg.lr0, cfg.min_lr, cfg.patience)
    best_state = _snapshot(model, opt)
    tlog = TrainLog()
    for epoch in range(1, cfg.epoch_limit + 1):
        model.train()
        lr_used = sched.lr
        total, n_tok, correct = 0.0, 0, 0
        for batch in batches(train_examples, cfg.batch_size, gen):
            out = model(batch)
            loss = out["loss"]
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch} on images {batch['image_ids'][:5]}")
            opt.zero_grad()
            loss.backward()
            if cfg.clip_norm and cfg.clip_norm > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            opt.step()
            total += out["total"].sum().item()
            n_tok += out["n_tokens"].item()
            correct += out["correct"].item()
        score, used = validation_score(model, val_examples, vocab, cfg, cfg.selection_metric)
        improved = score > sched.best
        if improved:
            best_state = _snapshot(model, opt)
        reload = sched.step(score)
        if reload:
            model.load_state_dict(best_state[0])
            opt.load_state_dict(best_state[1])
            for group in opt.param_groups:
                group["lr"] = sched.lr
        entry = dict(epoch=epoch, loss=total / len(train_examples), token_accuracy=correct / max(n_tok, 1),
                     val_metric=score, metric=used, lr=lr_used, best=sched.best, reloaded=reload,
                     next_lr=sched.lr)
        tlog.add(**entry)
        log.info("%s epoch %d loss %.4f acc %.4f %s %.4f lr %.2e%s", model.cfg.variant, epoch, entry["loss"],
                 entry["token_accuracy"], used, score, lr_used, " reload" if reload else "")
        if on_epoch is not None and on_epoch(entry) is False:
            break
    model.load_state_dict(best_state[0])
    return best_state[0], tlog


@torch.no_grad()
def teacher_forced_score(model, examples, metric_name, batch_size=100):
    was_training = model.training
    model.eval()
    total = correct = n_tok = 0.0
    for batch in batches(examples, batch_size):
        out = model(batch)
        total += out["total"].sum().item()
        correct += out["correct"].item()
        n_tok += out["n_tokens"].item()
    model.train(was_training)
    if metric_name == "loss":
        return -total / max(len(examples), 1)
    return correct / max(n_tok, 1)


@torch.no_grad()
def teacher_forced_accuracy(model, examples, batch_size=100):
    model.eval()
    correct = total = 0
    for batch in batches(examples, batch_size):
        out = model(batch)
        correct += out["correct"].item()
        total += out["n_tokens"].item()
    return correct / max(total, 1)
