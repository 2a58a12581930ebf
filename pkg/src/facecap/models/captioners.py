"""The eight captioners.

All models share one protocol so teacher forcing, decoding and checkpointing
stay generic:

* ``encode(batch)`` precomputes per-image tensors (batch-first),
* ``init_state(ctx)`` builds the initial recurrent state,
* ``step(ctx, state, prev_tokens)`` advances one word,
* ``loss_terms(trace, targets, mask, ctx)`` turns a teacher-forced trace into losses.

A batch is a dict with ``visual`` (B, K, D), ``faces`` (B, K*, D_f),
``n_faces`` (B,), ``encoding`` (B, 7) and ``tokens`` (B, T+2) holding
BOS, the caption ids, EOS and right padding.
"""

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..data import EOS, PAD
from ..errors import InputError
from .config import FACECAP_FAMILY, ModelConfig
from .layers import (GateLSTM, InitMLP, SoftAttention, attention_penalty, dual_log_mixture, face_loss,
                     masked_mean, word_nll)

FACE_ROWS_PER_FACE = 36


@dataclass
class StepOutput:
    logp: torch.Tensor  # (B, V) log of the decoding distribution
    state: dict
    attn: dict  # name -> (B, K) attention weights
    branch_logp: dict = field(default_factory=dict)
    face_logits: torch.Tensor = None


def face_row_mask(n_faces, n_rows):
    """True for rows belonging to detected faces; all rows for face-less images."""
    rows = torch.arange(n_rows, device=n_faces.device).unsqueeze(0)
    mask = rows < (FACE_ROWS_PER_FACE * n_faces).unsqueeze(1)
    mask[n_faces == 0] = True
    return mask


class CaptionModel(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        nn.init.uniform_(self.embed.weight, -cfg.embed_init, cfg.embed_init)

    @property
    def variant(self):
        return self.cfg.variant

    def _face_mask(self, batch):
        if not self.cfg.mask_face_padding:
            return None
        return face_row_mask(batch["n_faces"], batch["faces"].shape[1])

    def teacher_forced(self, batch):
        """Run every step on ground-truth inputs; returns the stacked trace."""
        tokens = batch["tokens"]
        inputs, targets = tokens[:, :-1], tokens[:, 1:]
        mask = targets != PAD
        words = (mask & (targets != EOS)).sum(1)
        if tokens.shape[1] < 3 or bool((words == 0).any()):
            raise InputError("empty caption")
        ctx = self.encode(batch)
        state = self.init_state(ctx)
        outs = []
        for t in range(inputs.shape[1]):
            out = self.step(ctx, state, inputs[:, t])
            state = out.state
            outs.append(out)
        trace = {
            "logp": torch.stack([o.logp for o in outs], 1),
            "attn": {k: torch.stack([o.attn[k] for o in outs], 1) for k in outs[0].attn},
            "branch_logp": {k: torch.stack([o.branch_logp[k] for o in outs], 1) for k in outs[0].branch_logp},
            "face_logits": None if outs[0].face_logits is None
            else torch.stack([o.face_logits for o in outs], 1),
        }
        return trace, targets, mask, ctx

    def forward(self, batch):
        """Per-sample loss terms plus the trace; ``out['loss']`` is the batch mean."""
        trace, targets, mask, ctx = self.teacher_forced(batch)
        terms = self.loss_terms(trace, targets, mask, ctx)
        terms["loss"] = terms["total"].mean()
        terms["trace"] = trace
        terms["correct"] = ((trace["logp"].argmax(-1) == targets) & mask).sum()
        terms["n_tokens"] = mask.sum()
        return terms

    def sequence_loss(self, batch):
        """Per-sample total objective (B,)."""
        return self(batch)["total"]


class FaceCapModel(CaptionModel):
    """Single attention LSTM over the visual grid, optionally driven by the facial encoding.

    Covers show-att-tell, step-inject, init-flow, face-cap-repeat and face-cap-memory.
    """

    def __init__(self, cfg):
        super().__init__(cfg)
        if cfg.variant not in FACECAP_FAMILY:
            raise InputError(f"{cfg.variant} is not a single-LSTM variant")
        H = cfg.hidden_dim
        self.attend = SoftAttention(cfg.visual_dim, H, cfg.att_dim)
        inputs = {"word": cfg.embed_dim, "context": cfg.visual_dim}
        if cfg.inject_encoding:
            inputs["encoding"] = cfg.n_classes
        self.lstm = GateLSTM(inputs, H)
        init_in = cfg.n_classes if cfg.init_source == "encoding" else cfg.visual_dim
        self.init_h = InitMLP(init_in, H)
        if cfg.memory_init:
            self.init_c = InitMLP(init_in, H)
        self.out_hidden = nn.Linear(H, cfg.vocab_size)
        self.out_context = nn.Linear(cfg.visual_dim, cfg.vocab_size, bias=False)
        if cfg.has_face_head:
            self.face_head = nn.Sequential(nn.Linear(H, cfg.face_head_hidden), nn.Tanh(),
                                           nn.Linear(cfg.face_head_hidden, cfg.n_classes))

    def encode(self, batch):
        visual = batch["visual"]
        return {"visual": visual, "proj": self.attend.project(visual),
                "encoding": batch["encoding"].to(visual.dtype)}

    def init_state(self, ctx):
        src = ctx["encoding"] if self.cfg.init_source == "encoding" else ctx["visual"].mean(1)
        h = self.init_h(src)
        c = self.init_c(src) if self.cfg.memory_init else torch.zeros_like(h)
        return {"h": h, "c": c}

    def step(self, ctx, state, prev):
        context, alpha = self.attend(ctx["visual"], ctx["proj"], state["h"])
        xs = {"word": self.embed(prev), "context": context}
        if self.cfg.inject_encoding:
            xs["encoding"] = ctx["encoding"]
        h, c = self.lstm(xs, state["h"], state["c"])
        logp = F.log_softmax(self.out_hidden(h) + self.out_context(context), dim=-1)
        face_logits = self.face_head(h) if self.cfg.has_face_head else None
        return StepOutput(logp, {"h": h, "c": c}, {"visual": alpha}, {"main": logp}, face_logits)

    def loss_terms(self, trace, targets, mask, ctx):
        word = word_nll(trace["logp"], targets, mask)
        pen = attention_penalty(trace["attn"]["visual"], mask)
        total = word + pen
        terms = {"word": word, "penalty_visual": pen}
        if self.cfg.face_loss_weight:
            fl = face_loss(trace["face_logits"], ctx["encoding"], mask)
            total = total + self.cfg.face_loss_weight * fl
            terms["face"] = fl
        terms["total"] = total
        return terms


class DualBranch(nn.Module):
    """One branch of the dual model: own attention, LSTM, init MLP and word head."""

    def __init__(self, feat_dim, cfg):
        super().__init__()
        H = cfg.hidden_dim
        self.attend = SoftAttention(feat_dim, H, cfg.att_dim)
        self.lstm = GateLSTM({"word": cfg.embed_dim, "context": feat_dim}, H)
        self.init_h = InitMLP(feat_dim, H)
        self.out_hidden = nn.Linear(H, cfg.vocab_size)
        self.out_context = nn.Linear(feat_dim, cfg.vocab_size, bias=False)

    def init(self, feats, mask=None):
        h = self.init_h(masked_mean(feats, mask))
        return h, torch.zeros_like(h)

    def step(self, feats, proj, h, c, word, mask=None):
        context, alpha = self.attend(feats, proj, h, mask)
        h, c = self.lstm({"word": word, "context": context}, h, c)
        logits = self.out_hidden(h) + self.out_context(context)
        return h, c, context, alpha, logits


def dual_branch_step(branch, feats, h_prev, c_prev, w_prev, mask=None):
    """Single step of a dual-model branch; returns ``(h, c, context, weights)``."""
    h, c, context, alpha, _ = branch.step(feats, branch.attend.project(feats), h_prev, c_prev, w_prev, mask)
    return h, c, context, alpha


class DualFaceAttModel(CaptionModel):
    """Separate face (F) and visual (C) attention LSTMs mixed at the word level."""

    def __init__(self, cfg):
        super().__init__(cfg)
        self.face = DualBranch(cfg.face_dim, cfg)
        self.visual = DualBranch(cfg.visual_dim, cfg)

    def encode(self, batch):
        return {"visual": batch["visual"], "visual_proj": self.visual.attend.project(batch["visual"]),
                "faces": batch["faces"], "faces_proj": self.face.attend.project(batch["faces"]),
                "face_mask": self._face_mask(batch)}

    def init_state(self, ctx):
        hf, cf = self.face.init(ctx["faces"], ctx["face_mask"])
        hc, cc = self.visual.init(ctx["visual"])
        return {"h_f": hf, "c_f": cf, "h_c": hc, "c_c": cc}

    def step(self, ctx, state, prev):
        w = self.embed(prev)
        hf, cf, _, a_f, logit_f = self.face.step(ctx["faces"], ctx["faces_proj"], state["h_f"], state["c_f"],
                                                 w, ctx["face_mask"])
        hc, cc, _, a_c, logit_c = self.visual.step(ctx["visual"], ctx["visual_proj"], state["h_c"],
                                                   state["c_c"], w)
        lp_f, lp_c = F.log_softmax(logit_f, -1), F.log_softmax(logit_c, -1)
        logp = dual_log_mixture(lp_f, lp_c, self.cfg.lam)
        return StepOutput(logp, {"h_f": hf, "c_f": cf, "h_c": hc, "c_c": cc},
                          {"visual": a_c, "face": a_f}, {"face": lp_f, "visual": lp_c})

    def loss_terms(self, trace, targets, mask, ctx):
        lam, beta1 = self.cfg.lam, self.cfg.beta1
        word_c = word_nll(trace["branch_logp"]["visual"], targets, mask)
        word_f = word_nll(trace["branch_logp"]["face"], targets, mask)
        pen_c = attention_penalty(trace["attn"]["visual"], mask)
        pen_f = attention_penalty(trace["attn"]["face"], mask)
        total = lam * (word_c + pen_c) + (1.0 - lam) * (word_f + beta1 * pen_f)
        return {"word_visual": word_c, "word_face": word_f, "penalty_visual": pen_c,
                "penalty_face": pen_f, "total": total}


class JointFaceAttModel(CaptionModel):
    """Attention LSTM plus language LSTM (joint-face-att; up-down without the face path)."""

    def __init__(self, cfg):
        super().__init__(cfg)
        H = cfg.hidden_dim
        self.use_faces = cfg.variant == "joint-face-att"
        self.att_lstm = GateLSTM({"mean_visual": cfg.visual_dim, "lang_hidden": H, "word": cfg.embed_dim}, H)
        lang_inputs = {"visual_context": cfg.visual_dim, "att_hidden": H}
        if self.use_faces:
            lang_inputs = {"face_context": cfg.face_dim, **lang_inputs}
            self.attend_face = SoftAttention(cfg.face_dim, H, cfg.att_dim)
            self.out_face = nn.Linear(cfg.face_dim, cfg.vocab_size, bias=False)
        self.attend_visual = SoftAttention(cfg.visual_dim, H, cfg.att_dim)
        self.lang_lstm = GateLSTM(lang_inputs, H)
        self.init_lang = InitMLP(cfg.visual_dim, H)
        self.init_att = InitMLP(cfg.visual_dim, H)
        self.out_hidden = nn.Linear(H, cfg.vocab_size)
        self.out_visual = nn.Linear(cfg.visual_dim, cfg.vocab_size, bias=False)

    def encode(self, batch):
        visual = batch["visual"]
        ctx = {"visual": visual, "visual_proj": self.attend_visual.project(visual),
               "mean_visual": visual.mean(1)}
        if self.use_faces:
            ctx.update(faces=batch["faces"], faces_proj=self.attend_face.project(batch["faces"]),
                       face_mask=self._face_mask(batch))
        return ctx

    def init_state(self, ctx):
        h_l, h_a = self.init_lang(ctx["mean_visual"]), self.init_att(ctx["mean_visual"])
        return {"h_a": h_a, "c_a": torch.zeros_like(h_a), "h_l": h_l, "c_l": torch.zeros_like(h_l)}

    def step(self, ctx, state, prev):
        h_a, c_a = self.att_lstm({"mean_visual": ctx["mean_visual"], "lang_hidden": state["h_l"],
                                  "word": self.embed(prev)}, state["h_a"], state["c_a"])
        c_hat, a_c = self.attend_visual(ctx["visual"], ctx["visual_proj"], h_a)
        xs = {"visual_context": c_hat, "att_hidden": h_a}
        attn = {"visual": a_c}
        if self.use_faces:
            f_hat, a_f = self.attend_face(ctx["faces"], ctx["faces_proj"], h_a, ctx["face_mask"])
            xs["face_context"] = f_hat
            attn["face"] = a_f
        h_l, c_l = self.lang_lstm(xs, state["h_l"], state["c_l"])
        logits = self.out_hidden(h_l) + self.out_visual(c_hat)
        if self.use_faces:
            logits = logits + self.out_face(f_hat)
        logp = F.log_softmax(logits, -1)
        return StepOutput(logp, {"h_a": h_a, "c_a": c_a, "h_l": h_l, "c_l": c_l}, attn, {"main": logp})

    def loss_terms(self, trace, targets, mask, ctx):
        word = word_nll(trace["logp"], targets, mask)
        pen_c = attention_penalty(trace["attn"]["visual"], mask)
        total = word + pen_c
        terms = {"word": word, "penalty_visual": pen_c}
        if self.use_faces:
            pen_f = attention_penalty(trace["attn"]["face"], mask)
            total = total + self.cfg.beta2 * pen_f
            terms["penalty_face"] = pen_f
        terms["total"] = total
        return terms


def build_model(cfg):
    if isinstance(cfg, dict):
        cfg = ModelConfig.from_dict(cfg)
    if cfg.variant in FACECAP_FAMILY:
        return FaceCapModel(cfg)
    if cfg.variant == "dual-face-att":
        return DualFaceAttModel(cfg)
    return JointFaceAttModel(cfg)
