import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facecap.data import (BOS, EOS, PAD, UNK, Vocabulary, build_face_subset, build_vocabulary,
                          read_manifest, split_dataset, split_sizes, tokenize, write_manifest)
from facecap.errors import DataError, InputError
from facecap.features import FixedBoxDetector


@pytest.mark.parametrize("text, tokens", [
    ("A man is smiling.", ["a", "man", "is", "smiling"]),
    ("", []),
    ("Rock-climbing, now!", ["rock-climbing", "now"]),
    ("The girl's dog -- barks 'loudly'", ["the", "girl's", "dog", "barks", "loudly"]),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


@pytest.mark.parametrize("n, sizes", [(117, [87, 20, 10]), (11696, [8696, 2000, 1000]), (3, [2, 1, 0])])
def test_split_sizes(n, sizes):
    assert split_sizes(n) == sizes


def test_split_dataset_partition_and_determinism():
    recs = [{"image_id": f"i{k}", "captions": ["x"]} for k in range(117)]
    a = split_dataset(recs, seed=3)
    b = split_dataset(recs, seed=3)
    assert [r["split"] for r in a] == [r["split"] for r in b]
    counts = {s: sum(r["split"] == s for r in a) for s in ("train", "val", "test")}
    assert counts == {"train": 87, "val": 20, "test": 10}
    assert [r["image_id"] for r in a] == [r["image_id"] for r in recs]
    assert [r["split"] for r in split_dataset(recs, seed=4)] != [r["split"] for r in a]
    with pytest.raises(InputError):
        split_dataset(recs[:2], seed=0)


def corpus(counts):
    caps = [w for w, n in counts.items() for _ in range(n)]
    return [{"image_id": "i0", "captions": caps, "split": "train"},
            {"image_id": "i1", "captions": ["ignored ignored ignored ignored"], "split": "val"}]


def test_vocabulary_example():
    vocab = build_vocabulary(corpus({"a": 5, "dog": 2, "zebu": 1}), min_count=2)
    assert vocab.stoi["a"] == 4 and vocab.stoi["dog"] == 5 and len(vocab) == 6
    assert vocab.encode(["zebu", "ignored"]) == [UNK, UNK]
    assert vocab.itos[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)


def test_vocabulary_min_count_one_has_no_unk_on_train():
    recs = corpus({"a": 5, "dog": 2, "zebu": 1})
    vocab = build_vocabulary(recs, min_count=1)
    train_tokens = [t for c in recs[0]["captions"] for t in tokenize(c)]
    assert UNK not in vocab.encode(train_tokens)
    assert build_vocabulary(recs, 1).itos == vocab.itos


def test_vocabulary_ties_break_alphabetically():
    vocab = build_vocabulary(corpus({"b": 3, "a": 3, "c": 4}), min_count=1)
    assert vocab.itos[4:] == ["c", "a", "b"]


def test_vocabulary_errors():
    with pytest.raises(InputError):
        build_vocabulary(corpus({"a": 1}), min_count=0)
    with pytest.raises(InputError):
        build_vocabulary([{"image_id": "x", "captions": ["a"], "split": "test"}])


def test_vocabulary_save_load(tmp_path):
    vocab = build_vocabulary(corpus({"a": 5, "dog": 2}), min_count=1)
    vocab.save(tmp_path / "v.json")
    back = Vocabulary.load(tmp_path / "v.json")
    assert back.itos == vocab.itos and back.min_count == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(4, 9), max_size=12))
def test_vocabulary_round_trip(ids):
    vocab = Vocabulary(["<pad>", "<bos>", "<eos>", "<unk>"] + list("abcdef"))
    assert vocab.encode(vocab.decode(ids)) == ids
    assert sorted(vocab.stoi.values()) == list(range(len(vocab)))


def test_build_face_subset_with_stub_detector(tmp_path):
    from PIL import Image

    recs = []
    for k in range(10):
        path = tmp_path / f"im{k}.png"
        Image.fromarray(np.full((20, 20, 3), k * 20, np.uint8)).save(path)
        recs.append({"image_id": f"im{k}", "path": path.name, "captions": ["x"]})

    class Stub:
        def __call__(self, rgb):
            # faces only in images whose gray level is a multiple of 60
            return [(0, 0, 5, 5)] if int(rgb[0, 0, 0]) % 60 == 0 and rgb[0, 0, 0] > 0 else []

    kept, skipped = build_face_subset(recs, Stub(), root=tmp_path)
    assert [r["image_id"] for r in kept] == ["im3", "im6", "im9"] and skipped == 0
    assert all(r["n_faces"] == 1 for r in kept)
    recs.append({"image_id": "gone", "path": "gone.png", "captions": ["x"]})
    kept2, skipped2 = build_face_subset(recs, FixedBoxDetector([(0, 0, 4, 4)]), root=tmp_path)
    assert len(kept2) == 10 and skipped2 == 1


def test_manifest_round_trip_and_errors(tmp_path):
    recs = [{"image_id": "a", "captions": ["x y"], "split": "train"}]
    write_manifest(recs, tmp_path / "m.jsonl")
    assert read_manifest(tmp_path / "m.jsonl") == recs
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps(recs[0]) + "\n{oops\n")
    with pytest.raises(DataError, match="row 2"):
        read_manifest(bad)
    bad.write_text(json.dumps({"image_id": "a", "captions": []}) + "\n")
    with pytest.raises(DataError):
        read_manifest(bad)
    bad.write_text(json.dumps({"image_id": "a", "captions": ["x"], "split": "dev"}) + "\n")
    with pytest.raises(DataError):
        read_manifest(bad)
