import json
import math
import sys

import numpy as np
import pytest
from oracles import bleu_oracle, cider_oracle, lcs_bruteforce, rouge_oracle

from facecap.errors import InputError
from facecap.metrics import bleu, cider, evaluate, external_metric, lcs_length, rouge_l, rouge_l_sentence

S = str.split


# --- BLEU ------------------------------------------------------------------------------------

def test_bleu_identical_is_one():
    assert bleu([S("a man is smiling at the camera")], [[S("a man is smiling at the camera"), S("x y")]]) == \
        pytest.approx([1.0] * 4)


def test_bleu_clipped_unigram():
    b1 = bleu([S("the the the")], [[S("the cat")]], n_max=1)[0]
    assert b1 == pytest.approx(1 / 3)


def test_bleu_brevity_penalty():
    # candidate shorter than the closest reference
    cand, refs = [S("a b")], [[S("a b c d")]]
    assert bleu(cand, refs, n_max=1)[0] == pytest.approx(math.exp(1 - 4 / 2))
    # ties in reference distance resolve to the shorter reference: 3 vs (2, 4) -> 2, no penalty
    assert bleu([S("a b c")], [[S("a b"), S("a b c d")]], n_max=1)[0] == pytest.approx(1.0)
    assert bleu([S("a b c")], [[S("a b c d e")]], n_max=1)[0] == pytest.approx(math.exp(1 - 5 / 3))


def test_bleu_order_invariant_and_errors():
    rng = np.random.default_rng(0)
    cands = [list(rng.choice(list("abcd"), 5)) for _ in range(6)]
    refs = [[list(rng.choice(list("abcd"), 6))] for _ in range(6)]
    perm = rng.permutation(6)
    assert bleu(cands, refs) == pytest.approx(bleu([cands[i] for i in perm], [refs[i] for i in perm]), abs=1e-12)
    with pytest.raises(InputError):
        bleu([], [])
    with pytest.raises(InputError):
        bleu([S("a")], [[]])


# --- ROUGE-L ---------------------------------------------------------------------------------

def test_rouge_examples():
    assert rouge_l_sentence(S("a b c"), [S("a b c")]) == pytest.approx(1.0)
    assert rouge_l_sentence(S("a b"), [S("c d")]) == 0.0
    assert lcs_length(S("a b c d"), S("a c d")) == 3
    p, r, beta = 3 / 4, 1.0, 1.2
    expected = (1 + beta ** 2) * p * r / (r + beta ** 2 * p)
    assert rouge_l_sentence(S("a b c d"), [S("a c d")]) == pytest.approx(expected)


def test_rouge_asymmetry():
    # P != R, so swapping candidate and reference changes the score
    ab = rouge_l_sentence(S("a b c d"), [S("a c d")])
    ba = rouge_l_sentence(S("a c d"), [S("a b c d")])
    assert ab != pytest.approx(ba)
    assert rouge_l_sentence(S("a b"), [S("b a")]) == rouge_l_sentence(S("b a"), [S("a b")])


def test_lcs_matches_bruteforce():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = list(rng.choice(list("abc"), rng.integers(0, 7)))
        b = list(rng.choice(list("abc"), rng.integers(0, 7)))
        assert lcs_length(a, b) == lcs_bruteforce(a, b)


# --- CIDEr -----------------------------------------------------------------------------------

def test_cider_hand_computed_three_images():
    refs = [[S("a b")], [S("a c")], [S("d e")]]
    cands = [S("a"), S("a c"), S("x")]
    score, per = cider(cands, refs)
    l15, l3 = math.log(1.5), math.log(3)
    # image 1: only unigrams overlap; length 1 vs 2
    img1 = 10 * math.exp(-1 / 72) * (l15 / math.sqrt(l15 ** 2 + l3 ** 2)) / 4
    # image 2: identical, unigram and bigram cosines are 1
    img2 = 10 * 2 / 4
    assert per == pytest.approx([img1, img2, 0.0], abs=1e-12)
    assert score == pytest.approx((img1 + img2) / 3)


def test_cider_identical_is_maximal_and_disjoint_zero():
    refs = [[S("a man smiles")], [S("two kids play ball")], [S("a dog runs")]]
    best, _ = cider([r[0] for r in refs], refs)
    worse, _ = cider([S("a man runs"), S("two kids smile"), S("a dog runs")], refs)
    assert best > worse
    assert cider([S("q r s")] * 3, refs)[0] == 0.0


def test_cider_single_image_warns(caplog):
    cider([S("a b")], [[S("a b")]])
    assert "degenerate" in caplog.text


def test_native_metrics_match_oracles_small_sample():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(2, 5))
        cands = [list(rng.choice(list("abcde"), rng.integers(1, 7))) for _ in range(n)]
        refs = [[list(rng.choice(list("abcde"), rng.integers(1, 7))) for _ in range(rng.integers(1, 4))]
                for _ in range(n)]
        assert bleu(cands, refs) == pytest.approx(bleu_oracle(cands, refs), abs=1e-9)
        assert rouge_l(cands, refs)[0] == pytest.approx(rouge_oracle(cands, refs)[0], abs=1e-9)
        assert cider(cands, refs)[0] == pytest.approx(cider_oracle(cands, refs)[0], abs=1e-9)


# --- adapters and reports --------------------------------------------------------------------

def stub_adapter(tmp_path, blob):
    script = tmp_path / "stub.py"
    script.write_text("import json, sys\njson.load(sys.stdin)\n"
                      f"print(json.dumps({json.dumps(blob)}))\n")
    return f"{sys.executable} {script}"


def test_external_unavailable(monkeypatch):
    monkeypatch.delenv("FACECAP_METEOR_CMD", raising=False)
    res = external_metric("meteor", {"a": "x"}, {"a": ["x"]})
    assert res.status == "unavailable" and res.score is None


def test_external_stub_parsed_verbatim(tmp_path):
    blob = {"score": 0.25, "per_image": {"a": 0.25},
            "subcategories": {"Relation": 0.1, "Attribute": 0.2, "Color": 0.0}}
    res = external_metric("spice", {"a": "x"}, {"a": ["x"]}, command=stub_adapter(tmp_path, blob))
    assert res.status == "ok" and res.score == 0.25
    assert res.per_image == blob["per_image"] and res.subcategories == blob["subcategories"]


def test_external_bad_output_is_error(tmp_path):
    res = external_metric("meteor", {"a": "x"}, {"a": ["x"]}, command=stub_adapter(tmp_path, {"nope": 1}))
    assert res.status == "error"
    with pytest.raises(InputError):
        external_metric("cider-r", {}, {})


def test_evaluate_report(tmp_path, monkeypatch):
    monkeypatch.delenv("FACECAP_SPICE_CMD", raising=False)
    cands = {"1": "A man smiles.", "2": "Two kids play."}
    refs = {"1": ["a man smiles", "a person grins"], "2": ["two kids play ball"], "3": ["unused"]}
    rep = evaluate(cands, refs, metrics=("bleu", "rougeL", "cider", "meteor", "spice"),
                   commands={"meteor": stub_adapter(tmp_path, {"score": 0.3})})
    assert set(rep.scores) == {"bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "cider", "meteor"}
    assert rep.external["spice"]["status"] == "unavailable" and "spice" not in rep.scores
    assert all(0 <= rep.scores[f"bleu{n}"] <= 1 for n in range(1, 5)) and 0 <= rep.scores["rougeL"] <= 1
    assert rep.scores["cider"] >= 0 and rep.counts == {"images": 2, "references": 3}
    with pytest.raises(InputError):
        evaluate({"9": "x"}, refs)
    with pytest.raises(InputError):
        evaluate(cands, refs, metrics=("bleu", "wer"))
