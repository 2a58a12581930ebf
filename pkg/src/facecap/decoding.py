"""Greedy and beam-search caption generation."""

from dataclasses import dataclass

import torch

from .data import BOS, EOS
from .errors import InputError


@dataclass
class Decoded:
    tokens: list  # word ids, BOS/EOS stripped
    score: float
    attention: list  # per generated step: {name: (K,) weights}


def _index(tree, idx):
    if tree is None:
        return None
    if isinstance(tree, dict):
        return {k: _index(v, idx) for k, v in tree.items()}
    return tree.index_select(0, idx)


@torch.no_grad()
def greedy_decode(model, batch, max_len=20):
    model.eval()
    ctx = model.encode(batch)
    state = model.init_state(ctx)
    n = batch["visual"].shape[0]
    prev = torch.full((n,), BOS, dtype=torch.long)
    done = torch.zeros(n, dtype=torch.bool)
    tokens = [[] for _ in range(n)]
    attn = [[] for _ in range(n)]
    scores = torch.zeros(n, dtype=torch.float64)
    for _ in range(max_len):
        out = model.step(ctx, state, prev)
        best, word = out.logp.topk(1, dim=-1)
        best, word = best[:, 0], word[:, 0]
        for i in range(n):
            if done[i]:
                continue
            attn[i].append({k: v[i].clone() for k, v in out.attn.items()})
            scores[i] += best[i].double()
            if word[i].item() == EOS:
                done[i] = True
            else:
                tokens[i].append(word[i].item())
        if bool(done.all()):
            break
        state, prev = out.state, word
    return [Decoded(tokens[i], scores[i].item(), attn[i]) for i in range(n)]


@torch.no_grad()
def beam_decode_one(model, batch, width, max_len=20):
    """Length-unnormalized beam search for a single-image batch."""
    model.eval()
    ctx = model.encode(batch)
    state = model.init_state(ctx)
    beams = [([], 0.0, [])]  # (tokens, score, attention)
    prev = torch.tensor([BOS])
    finished = []
    for _ in range(max_len):
        out = model.step(ctx, state, prev)
        # float64 accumulation keeps the ordering of distinct float32 log-probs
        cand = torch.tensor([b[1] for b in beams], dtype=torch.float64).unsqueeze(1) + out.logp.double()
        flat = cand.reshape(-1)
        top_scores, top_idx = flat.topk(min(width, flat.numel()))
        vocab = out.logp.shape[1]
        keep_rows, new_beams = [], []
        for score, idx in zip(top_scores.tolist(), top_idx.tolist()):
            row, word = divmod(idx, vocab)
            toks, _, att = beams[row]
            att = att + [{k: v[row].clone() for k, v in out.attn.items()}]
            if word == EOS:
                finished.append((toks, score, att))
            else:
                new_beams.append((toks + [word], score, att))
                keep_rows.append(row)
        if len(finished) >= width or not new_beams:
            break
        beams = new_beams
        rows = torch.tensor(keep_rows)
        ctx, state = _index(ctx, rows), _index(out.state, rows)
        prev = torch.tensor([b[0][-1] for b in beams])
    else:
        finished.extend(beams)
    if not finished:
        finished = beams
    toks, score, att = max(finished, key=lambda b: b[1])
    return Decoded(toks, score, att)


def decode(model, batch, mode="greedy", max_len=20):
    """``mode`` is ``"greedy"`` or ``"beam:K"`` / ``("beam", K)``."""
    if isinstance(mode, str) and mode.startswith("beam"):
        try:
            width = int(mode.split(":", 1)[1])
        except (IndexError, ValueError):
            raise InputError(f"beam mode must look like beam:K, got {mode!r}") from None
        mode = ("beam", width)
    if mode == "greedy":
        return greedy_decode(model, batch, max_len)
    if isinstance(mode, tuple) and mode[0] == "beam" and mode[1] >= 1:
        n = batch["visual"].shape[0]
        out = []
        for i in range(n):
            one = {k: (v[i:i + 1] if torch.is_tensor(v) else v[i:i + 1]) for k, v in batch.items()}
            out.append(beam_decode_one(model, one, mode[1], max_len))
        return out
    raise InputError(f"unknown decode mode {mode!r}")
