import logging
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from facecap.data import BOS, EOS, PAD  # noqa: E402
from facecap.models import ModelConfig, build_model  # noqa: E402

# micro dimensions used by gradient, normalization and oracle checks
MICRO = dict(hidden_dim=8, embed_dim=5, att_dim=6, visual_dim=4, face_dim=4, vocab_size=11)
MICRO_K, MICRO_KF = 3, 6


def micro_model(variant, seed=0, dtype=torch.float64, **overrides):
    torch.manual_seed(seed)
    cfg = ModelConfig(variant=variant, **{**MICRO, **overrides})
    model = build_model(cfg).to(dtype)
    # default inits are small; widen them so every path carries signal
    with torch.no_grad():
        for p in model.parameters():
            p.uniform_(-0.5, 0.5)
    return model


def random_batch(rng, B=2, T=3, K=MICRO_K, KF=MICRO_KF, D=4, DF=4, V=11, n_faces=None,
                 dtype=torch.float64, lengths=None):
    """Random batch with captions of ``T`` target steps (words + EOS)."""
    lengths = lengths or [T] * B
    tokens = torch.full((B, max(lengths) + 1), PAD, dtype=torch.long)
    for b, L in enumerate(lengths):
        words = rng.integers(4, V, size=L - 1)
        tokens[b, :L + 1] = torch.tensor([BOS, *words.tolist(), EOS])
    enc = np.zeros((B, 7))
    enc[np.arange(B), rng.integers(0, 7, size=B)] = 1
    nf = rng.integers(0, 4, size=B) if n_faces is None else np.full(B, n_faces)
    faces = rng.normal(size=(B, KF, DF))
    return {
        "visual": torch.tensor(rng.normal(size=(B, K, D)), dtype=dtype),
        "faces": torch.tensor(faces, dtype=dtype),
        "n_faces": torch.tensor(nf, dtype=torch.long),
        "encoding": torch.tensor(enc, dtype=dtype),
        "tokens": tokens,
        "image_ids": [f"x{b}" for b in range(B)],
    }


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    from facecap.fixture import make_fixture

    return make_fixture(tmp_path_factory.mktemp("fixture"))


@pytest.fixture(scope="session")
def fixture_run(fixture_dir, tmp_path_factory):
    """Full pipeline on the synthetic fixture with the bundled fast settings."""
    from facecap.pipeline import fixture_config, run_pipeline

    cfg = fixture_config(fixture_dir, tmp_path_factory.mktemp("run"))
    status, summary = run_pipeline(cfg)
    assert status == 0, summary
    return cfg, summary


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
