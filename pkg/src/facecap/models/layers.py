"""Building blocks shared by every captioner: attention, gated LSTM cell, losses."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import InputError, NumericError


class SoftAttention(nn.Module):
    """Additive attention ``softmax(w_e . tanh(W_z z_i + W_h h))`` over feature rows."""

    def __init__(self, feat_dim, query_dim, att_dim):
        super().__init__()
        self.feat = nn.Linear(feat_dim, att_dim, bias=False)
        self.query = nn.Linear(query_dim, att_dim, bias=False)
        self.score = nn.Linear(att_dim, 1, bias=False)

    def project(self, feats):
        return self.feat(feats)

    def forward(self, feats, proj, h, mask=None):
        logits = self.score(torch.tanh(proj + self.query(h).unsqueeze(1))).squeeze(-1)
        if mask is not None:
            logits = logits.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        context = torch.bmm(weights.unsqueeze(1), feats).squeeze(1)
        return context, weights


def soft_attention(att, feats, h_prev, mask=None):
    """Attend over ``feats`` (K x D, or batched B x K x D) with query ``h_prev``."""
    single = feats.dim() == 2
    if single:
        feats, h_prev = feats.unsqueeze(0), h_prev.unsqueeze(0)
        mask = None if mask is None else mask.unsqueeze(0)
    if not (torch.isfinite(feats).all() and torch.isfinite(h_prev).all()):
        raise NumericError("soft_attention received non-finite inputs")
    if feats.shape[-1] != att.feat.in_features or h_prev.shape[-1] != att.query.in_features:
        raise InputError(f"attention expects D={att.feat.in_features}, H={att.query.in_features}")
    context, weights = att(feats, att.project(feats), h_prev, mask)
    if single:
        return context[0], weights[0]
    return context, weights


class GateLSTM(nn.Module):
    """LSTM cell whose gate pre-activation is a sum of one linear map per named input.

    ``pre = U h + b + sum_k W_k x_k``. Keeping the maps separate means an input
    whose weights are zero contributes exactly nothing, which the ablation
    equivalences rely on.
    """

    def __init__(self, input_dims, hidden_dim):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.inputs = nn.ModuleDict({k: nn.Linear(d, 4 * hidden_dim, bias=False) for k, d in input_dims.items()})
        self.recurrent = nn.Linear(hidden_dim, 4 * hidden_dim)

    def forward(self, xs, h, c):
        pre = self.recurrent(h)
        for name, lin in self.inputs.items():
            if name not in xs:
                raise InputError(f"LSTM input {name!r} missing")
            pre = pre + lin(xs[name])
        i, f, o, g = pre.chunk(4, dim=-1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c


class InitMLP(nn.Module):
    """``tanh(W x + b)`` used for initial hidden/memory states."""

    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim)

    def forward(self, x):
        return torch.tanh(self.linear(x))


def masked_mean(feats, mask=None):
    if mask is None:
        return feats.mean(dim=1)
    m = mask.to(feats.dtype).unsqueeze(-1)
    return (feats * m).sum(1) / m.sum(1).clamp_min(1.0)


def init_hidden_mean(mlp, feats, mask=None):
    """Initial state from the mean feature row."""
    if feats.shape[-2] < 1:
        raise InputError("need at least one feature row")
    single = feats.dim() == 2
    x = masked_mean(feats.unsqueeze(0) if single else feats, mask)
    out = mlp(x)
    return out[0] if single else out


def attention_penalty(weights, step_mask):
    """``sum_k (1 - sum_t alpha_tk)^2`` per sample; ``weights`` is (B, T, K)."""
    mass = (weights * step_mask.unsqueeze(-1).to(weights.dtype)).sum(dim=1)
    return ((1.0 - mass) ** 2).sum(dim=-1)


def word_nll(logp, targets, step_mask):
    """Summed negative log-likelihood of the targets per sample."""
    picked = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -(picked * step_mask.to(logp.dtype)).sum(dim=1)


def face_loss(logits, encoding, step_mask=None):
    """Cross-entropy of the face head against the one-hot encoding, averaged over steps.

    ``logits`` is (B, T, C) or (B, C); ``encoding`` is (B, C).
    """
    if logits.dim() == 2:
        logits = logits.unsqueeze(1)
    logp = F.log_softmax(logits, dim=-1)
    per_step = -(logp * encoding.unsqueeze(1)).sum(-1)
    if step_mask is None:
        return per_step.mean(dim=1)
    m = step_mask.to(per_step.dtype)
    return (per_step * m).sum(1) / m.sum(1).clamp_min(1.0)


def dual_word_distribution(logits_f, logits_c, lam):
    """Mixture ``lam * softmax(face logits) + (1 - lam) * softmax(visual logits)``."""
    if not 0.0 <= lam <= 1.0:
        raise InputError("lam must lie in [0, 1]")
    return lam * torch.softmax(logits_f, -1) + (1.0 - lam) * torch.softmax(logits_c, -1)


def dual_log_mixture(logp_f, logp_c, lam):
    """Log of the dual mixture, stable for lam in {0, 1}."""
    a = logp_f + (math.log(lam) if lam > 0 else float("-inf"))
    b = logp_c + (math.log(1.0 - lam) if lam < 1 else float("-inf"))
    return torch.logsumexp(torch.stack([a, b]), dim=0)
