"""Run configuration and the staged end-to-end pipeline.

Stages run in dependency order: data -> fer -> features -> train -> caption ->
evaluate -> analyze. Each stage writes into its own directory under
``work_dir`` together with ``stage.json`` (input key plus output file hashes)
and ``provenance.json``. A stage whose input key and outputs are unchanged is
skipped; a stage that raises leaves its partial outputs plus a ``FAILED`` file.
"""

import hashlib
import json
import logging
import platform
import time
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .analysis import default_tagger, load_lexicon, verb_report
from .batching import FeatureCache, collate, image_examples, make_examples
from .data import (SPLITS, Vocabulary, build_face_subset, build_vocabulary, read_manifest, resolve_path,
                   split_dataset, write_manifest)
from .decoding import decode
from .errors import DataError, InputError
from .features import (FerModelConfig, FerTrainConfig, drop_black, extract_manifest, get_backbone,
                       get_detector, load_fer, prepare_fer_splits, read_fer2013, save_fer, train_fer)
from .metrics import evaluate
from .metrics.report import EXTERNAL, NATIVE
from .models import ModelConfig, VARIANTS, build_model, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

log = logging.getLogger(__name__)

DETECTORS = ("marker", "haar", "dlib")
BACKBONES = ("pixel-projection", "small-cnn", "vgg-e", "constant")
STAGES = ("data", "fer", "features", "train", "caption", "evaluate", "analyze")


def _strict(cls, blob, where):
    if not isinstance(blob, dict):
        raise InputError(f"{where} must be an object")
    unknown = set(blob) - {f.name for f in fields(cls)}
    if unknown:
        raise InputError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**blob)


@dataclass
class Paths:
    manifest: str
    work_dir: str
    image_root: str = None  # defaults to the manifest's directory
    fer_csv: str = None
    fer_checkpoint: str = None  # use a trained FER network instead of training one
    lexicon: str = None


@dataclass
class DataOptions:
    detector: str = "marker"
    min_count: int = 5
    split_seed: int = 0
    train_captions_per_image: int = None  # None keeps all references
    max_len: int = 20


@dataclass
class FerOptions:
    model: dict = field(default_factory=dict)  # FerModelConfig fields
    train: dict = field(default_factory=dict)  # FerTrainConfig fields
    max_train_samples: int = None


@dataclass
class FeatureOptions:
    backbone: str = "pixel-projection"
    backbone_args: dict = field(default_factory=dict)
    workers: int = 1


@dataclass
class DecodeOptions:
    mode: str = "greedy"
    max_len: int = 20
    split: str = "test"


@dataclass
class RunConfig:
    paths: Paths
    variants: list = field(default_factory=lambda: list(VARIANTS))
    model: dict = field(default_factory=dict)  # shared ModelConfig overrides
    model_overrides: dict = field(default_factory=dict)  # {variant: {field: value}}
    train: dict = field(default_factory=dict)  # TrainConfig fields
    data: DataOptions = field(default_factory=DataOptions)
    fer: FerOptions = field(default_factory=FerOptions)
    features: FeatureOptions = field(default_factory=FeatureOptions)
    decode: DecodeOptions = field(default_factory=DecodeOptions)
    metrics: list = field(default_factory=lambda: ["bleu", "rougeL", "cider", "meteor", "spice"])
    seed: int = 0

    def __post_init__(self):
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or not self.variants:
            raise InputError(f"variants must be a non-empty subset of {VARIANTS}, got {bad or self.variants}")
        if self.decode.split not in SPLITS:
            raise InputError(f"decode.split must be one of {SPLITS}")
        for v in self.model_overrides:
            if v not in self.variants:
                raise InputError(f"model_overrides names variant {v!r} that is not being run")
        # every model/train block must build cleanly now, not hours into a run
        for v in self.variants:
            self.model_config(v, vocab_size=10)
        self.train_config()
        _strict(FerModelConfig, self.fer.model, "fer.model")
        _strict(FerTrainConfig, self.fer.train, "fer.train")
        if self.data.detector not in DETECTORS:
            raise InputError(f"data.detector must be one of {DETECTORS}")
        if self.features.backbone not in BACKBONES:
            raise InputError(f"features.backbone must be one of {BACKBONES}")
        bad = set(self.metrics) - set(NATIVE) - set(EXTERNAL)
        if bad:
            raise InputError(f"unknown metrics {sorted(bad)}")

    @classmethod
    def from_dict(cls, blob):
        if not isinstance(blob, dict):
            raise InputError("run config must be an object")
        blob = dict(blob)
        unknown = set(blob) - {f.name for f in fields(cls)}
        if unknown:
            raise InputError(f"unknown keys in run config: {sorted(unknown)}")
        if "paths" not in blob:
            raise InputError("run config needs a paths block")
        blob["paths"] = _strict(Paths, blob["paths"], "paths")
        for key, sub in (("data", DataOptions), ("fer", FerOptions), ("features", FeatureOptions),
                         ("decode", DecodeOptions)):
            if key in blob:
                blob[key] = _strict(sub, blob[key], key)
        return cls(**blob)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            blob = json.loads(path.read_text())
        except FileNotFoundError:
            raise InputError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path} is not valid JSON: {exc}") from None
        # relative paths in a config file are relative to the file
        for key, val in list(blob.get("paths", {}).items()):
            if isinstance(val, str) and not Path(val).is_absolute():
                blob["paths"][key] = str((path.parent / val).resolve())
        return cls.from_dict(blob)

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def model_config(self, variant, vocab_size, **dims):
        blob = {**self.model, **self.model_overrides.get(variant, {}), **dims}
        return _strict(ModelConfig, {"variant": variant, "vocab_size": vocab_size, **blob}, "model")

    def train_config(self, variant=None):
        blob = {"seed": self.seed, **self.train}
        cfg = _strict(TrainConfig, blob, "train")
        return cfg.resolve(variant) if variant else cfg

    def effective(self, vocab_size=None, dims=None):
        """Config with every default spelled out, per variant."""
        out = self.to_dict()
        out["fer"]["model"] = asdict(FerModelConfig(**self.fer.model))
        out["fer"]["train"] = asdict(FerTrainConfig(**{"seed": self.seed, **self.fer.train}))
        out["resolved"] = {
            v: {"model": self.model_config(v, vocab_size or 1, **(dims or {})).to_dict(),
                "train": self.train_config(v).to_dict()}
            for v in self.variants
        }
        return out

    @property
    def image_root(self):
        return self.paths.image_root or str(Path(self.paths.manifest).parent)


def validate_paths(cfg):
    """Check every input path up front."""
    p = cfg.paths
    if not Path(p.manifest).is_file():
        raise InputError(f"manifest {p.manifest} not found")
    if not Path(cfg.image_root).is_dir():
        raise InputError(f"image root {cfg.image_root} is not a directory")
    if p.fer_checkpoint:
        if not Path(p.fer_checkpoint).is_file():
            raise InputError(f"FER checkpoint {p.fer_checkpoint} not found")
    elif not p.fer_csv:
        raise InputError("paths needs fer_csv or fer_checkpoint")
    elif not Path(p.fer_csv).is_file():
        raise InputError(f"FER csv {p.fer_csv} not found")
    if p.lexicon and not Path(p.lexicon).is_file():
        raise InputError(f"lexicon {p.lexicon} not found")


# --- hashing and provenance ---------------------------------------------------------------

def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def file_hash(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(chunk), b""):
            h.update(block)
    return h.hexdigest()


def text_hash(text):
    return hashlib.sha256(text.encode()).hexdigest()


def versions():
    return {"facecap": __version__, "python": platform.python_version(), "torch": torch.__version__,
            "numpy": np.__version__, "platform": platform.platform()}


def set_seed(seed):
    torch.manual_seed(seed)
    np.random.seed(seed % (2 ** 32))


class Stage:
    """A directory holding one stage's artifacts and its bookkeeping files."""

    def __init__(self, root, name, key, provenance):
        self.name = name
        self.dir = Path(root) / name
        self.key = key
        self.provenance = provenance

    @property
    def record(self):
        path = self.dir / "stage.json"
        return json.loads(path.read_text()) if path.exists() else None

    def up_to_date(self):
        rec = self.record
        if rec is None or rec.get("key") != self.key or (self.dir / "FAILED").exists():
            return False
        for rel, digest in rec.get("outputs", {}).items():
            path = self.dir / rel
            if not path.is_file() or file_hash(path) != digest:
                return False
        return True

    def output_hash(self):
        return text_hash(canonical_json(self.record["outputs"]))

    def begin(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        for name in ("FAILED", "stage.json"):
            (self.dir / name).unlink(missing_ok=True)

    def fail(self, exc):
        (self.dir / "FAILED").write_text(
            f"{type(exc).__name__}: {exc}\n\n" + "".join(traceback.format_exception(exc)))

    def finish(self, seconds):
        outputs = {}
        for path in sorted(self.dir.rglob("*")):
            rel = path.relative_to(self.dir).as_posix()
            if path.is_file() and rel not in ("stage.json", "provenance.json", "FAILED"):
                outputs[rel] = file_hash(path)
        prov = {**self.provenance, "stage": self.name, "stage_key": self.key, "seconds": round(seconds, 3)}
        (self.dir / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
        (self.dir / "stage.json").write_text(
            json.dumps({"key": self.key, "outputs": outputs}, indent=2, sort_keys=True) + "\n")


# --- stage bodies ---------------------------------------------------------------------------

def stage_data(cfg, out):
    records = read_manifest(cfg.paths.manifest)
    ids = [r["image_id"] for r in records]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate image_id in manifest")
    for i, rec in enumerate(records, start=1):
        if "path" not in rec:
            raise DataError("missing field 'path'", row=i)
    kept, skipped = build_face_subset(records, get_detector(cfg.data.detector), root=cfg.image_root)
    if len(kept) < 3:
        raise DataError(f"only {len(kept)} images with faces; need at least 3")
    for rec in kept:
        rec["path"] = str(resolve_path(rec, cfg.image_root))
    split = split_dataset(kept, cfg.data.split_seed)
    vocab = build_vocabulary(split, cfg.data.min_count)
    write_manifest(split, out / "manifest.jsonl")
    vocab.save(out / "vocab.json")
    counts = {s: sum(r["split"] == s for r in split) for s in SPLITS}
    summary = {"input_images": len(records), "face_images": len(kept), "skipped": skipped, "splits": counts,
               "vocab_size": len(vocab)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def stage_fer(cfg, out):
    if cfg.paths.fer_checkpoint:
        model = load_fer(cfg.paths.fer_checkpoint)
    else:
        splits = read_fer2013(cfg.paths.fer_csv)
        splits = {k: drop_black(v) for k, v in splits.items()}
        tr, dev, test = prepare_fer_splits(splits, seed=cfg.seed)
        if cfg.fer.max_train_samples is not None and len(tr) > cfg.fer.max_train_samples:
            idx = np.sort(np.random.default_rng(cfg.seed).permutation(len(tr))[:cfg.fer.max_train_samples])
            tr = tr.subset(idx)
        tcfg = FerTrainConfig(**{"seed": cfg.seed, **cfg.fer.train})
        model = train_fer(tr, dev, FerModelConfig(**cfg.fer.model), tcfg, test=test)
    save_fer(model, out / "fer.pt")
    (out / "report.json").write_text(json.dumps(model.report, indent=2, sort_keys=True) + "\n")
    return model.report


def stage_features(cfg, out, data_dir, fer_dir):
    records = read_manifest(data_dir / "manifest.jsonl")
    fer = load_fer(fer_dir / "fer.pt")
    backbone = get_backbone(cfg.features.backbone, **cfg.features.backbone_args)
    done = extract_manifest(records, out / "feats", get_detector(cfg.data.detector), fer, backbone,
                            workers=cfg.features.workers)
    return {"images": len(done)}


def _load_data(data_dir, feat_dir):
    records = read_manifest(data_dir / "manifest.jsonl")
    vocab = Vocabulary.load(data_dir / "vocab.json")
    return records, vocab, FeatureCache(feat_dir / "feats")


def feature_dims(features, image_id):
    f = features(image_id)
    return {"visual_dim": f.visual.feats.shape[1], "face_dim": f.faces.feats.shape[1]}


def stage_train(cfg, out, variant, data_dir, feat_dir):
    records, vocab, features = _load_data(data_dir, feat_dir)
    dims = feature_dims(features, records[0]["image_id"])
    mcfg = cfg.model_config(variant, len(vocab), **dims)
    tcfg = cfg.train_config(variant)
    tr = make_examples(records, features, vocab, "train", cfg.data.train_captions_per_image, cfg.data.max_len)
    va = make_examples(records, features, vocab, "val", None, cfg.data.max_len)
    set_seed(cfg.seed)
    model = build_model(mcfg)
    _, tlog = train(model, tr, va, vocab, tcfg)
    save_checkpoint(out / "model.pt", model, vocab, extra={"train": tcfg.to_dict()})
    (out / "log.json").write_text(json.dumps(tlog.to_dict(), indent=2, sort_keys=True) + "\n")
    return {"epochs": len(tlog.epochs), "best": max(e["val_metric"] for e in tlog.epochs)}


@torch.no_grad()
def caption_examples(model, vocab, examples, mode="greedy", max_len=20, batch_size=50):
    model.eval()
    out = {}
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        for ex, dec in zip(chunk, decode(model, collate(chunk), mode, max_len)):
            out[ex.image_id] = " ".join(vocab.decode(dec.tokens))
    return out


def write_captions(captions, path, variant=None):
    with open(path, "w") as fh:
        for image_id in sorted(captions):
            row = {"image_id": image_id, "caption": captions[image_id], "variant": variant}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_captions(path):
    out = {}
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                out[row["image_id"]] = row["caption"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise DataError("caption rows need image_id and caption", row=i) from None
    return out


def stage_caption(cfg, out, variant, data_dir, feat_dir, ckpt):
    records, vocab, features = _load_data(data_dir, feat_dir)
    model, vocab, _ = load_checkpoint(ckpt, variant=variant, vocab=vocab)
    exs = image_examples(records, features, cfg.decode.split)
    caps = caption_examples(model, vocab, exs, cfg.decode.mode, cfg.decode.max_len)
    write_captions(caps, out / f"{variant}.jsonl", variant)
    return {"captions": len(caps)}


def references_for(records, split=None):
    return {r["image_id"]: list(r["captions"]) for r in records if split is None or r.get("split") == split}


def stage_evaluate(cfg, out, data_dir, cap_dir):
    records = read_manifest(data_dir / "manifest.jsonl")
    refs = references_for(records, cfg.decode.split)
    summary = {}
    for v in cfg.variants:
        report = evaluate(read_captions(cap_dir / f"{v}.jsonl"), refs, tuple(cfg.metrics))
        (out / f"{v}.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        summary[v] = report.scores
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def stage_analyze(cfg, out, data_dir, cap_dir):
    records = read_manifest(data_dir / "manifest.jsonl")
    tagger = default_tagger()
    lexicon = load_lexicon(cfg.paths.lexicon) if cfg.paths.lexicon else None
    refs = [c for caps in references_for(records, cfg.decode.split).values() for c in caps]
    summary = {"references": verb_report(refs, tagger, lexicon)}
    for v in cfg.variants:
        caps = list(read_captions(cap_dir / f"{v}.jsonl").values())
        summary[v] = verb_report(caps, tagger, lexicon)
    for name, rep in summary.items():
        (out / f"{name}.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    return {k: v["entropy"] for k, v in summary.items()}


# --- driver -------------------------------------------------------------------------------

def _stage_keys(cfg):
    """Input key per stage: the config slice it reads plus the keys of what it depends on."""
    c = cfg.to_dict()
    data_in = {"manifest": file_hash(cfg.paths.manifest), "data": c["data"], "root": cfg.image_root}
    records = read_manifest(cfg.paths.manifest)
    data_in["images"] = {r["image_id"]: file_hash(p) for r in records
                         if "path" in r and (p := resolve_path(r, cfg.image_root)).is_file()}
    if cfg.paths.fer_checkpoint:
        fer_in = {"checkpoint": file_hash(cfg.paths.fer_checkpoint)}
    else:
        fer_in = {"csv": file_hash(cfg.paths.fer_csv), "fer": c["fer"], "seed": cfg.seed}
    return data_in, fer_in


def run_pipeline(cfg, until=None, force=False):
    """Run every stage up to ``until`` (default: all), skipping up-to-date ones.

    Returns ``(exit_status, summary)``; a failing stage gives status 1.
    """
    until = until or STAGES[-1]
    if until not in STAGES:
        raise InputError(f"unknown stage {until!r}; expected one of {STAGES}")
    last = STAGES.index(until)
    validate_paths(cfg)
    work = Path(cfg.paths.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    config_blob = cfg.to_dict()
    config_hash = text_hash(canonical_json(config_blob))
    (work / "config.json").write_text(json.dumps(config_blob, indent=2, sort_keys=True) + "\n")
    provenance = {"config_hash": config_hash, "seed": cfg.seed, "versions": versions(), "config": config_blob}
    summary = {"config_hash": config_hash, "stages": {}}
    try:
        data_in, fer_in = _stage_keys(cfg)
    except DataError as exc:
        # an unreadable manifest fails the data stage before anything runs
        st = Stage(work, "data", None, provenance)
        st.begin()
        st.fail(exc)
        summary["stages"]["data"] = "failed"
        summary["error"] = f"{type(exc).__name__}: {exc}"
        log.error("pipeline failed: %s", summary["error"])
        (work / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return 1, summary
    torch.use_deterministic_algorithms(True, warn_only=True)

    def run(name, inputs, body):
        key = text_hash(canonical_json({"stage": name, "inputs": inputs, "version": __version__}))
        st = Stage(work, name, key, provenance)
        if not force and st.up_to_date():
            summary["stages"][name] = "skipped"
            log.info("stage %s up to date, skipped", name)
            return st
        st.begin()
        t0 = time.time()
        log.info("stage %s running", name)
        try:
            body(st.dir)
        except Exception as exc:
            st.fail(exc)
            summary["stages"][name] = "failed"
            raise
        st.finish(time.time() - t0)
        summary["stages"][name] = "ran"
        return st

    try:
        data = run("data", data_in, lambda out: stage_data(cfg, out))
        if last < STAGES.index("fer"):
            return _done(work, summary)
        fer = run("fer", fer_in, lambda out: stage_fer(cfg, out))
        feats = run("features", {"data": data.output_hash(), "fer": fer.output_hash(),
                                 "features": config_blob["features"], "detector": cfg.data.detector},
                    lambda out: stage_features(cfg, out, data.dir, fer.dir))
        if last < STAGES.index("features"):
            return _done(work, summary)
        first = read_manifest(data.dir / "manifest.jsonl")[0]["image_id"]
        dims = feature_dims(FeatureCache(feats.dir / "feats"), first)
        vocab_size = len(Vocabulary.load(data.dir / "vocab.json"))
        (work / "effective_config.json").write_text(
            json.dumps(cfg.effective(vocab_size, dims), indent=2, sort_keys=True) + "\n")
        cap_keys = {}
        for v in cfg.variants:
            if last < STAGES.index("train"):
                break
            tr_in = {"data": data.output_hash(), "features": feats.output_hash(),
                     "model": cfg.model_config(v, vocab_size, **dims).to_dict(),
                     "train": cfg.train_config(v).to_dict(), "data_opts": config_blob["data"], "seed": cfg.seed}
            tr = run(f"train/{v}", tr_in, lambda out, v=v: stage_train(cfg, out, v, data.dir, feats.dir))
            if last < STAGES.index("caption"):
                continue
            cap_in = {"train": tr.output_hash(), "decode": config_blob["decode"]}
            cap = run(f"caption/{v}", cap_in,
                      lambda out, v=v, tr=tr: stage_caption(cfg, out, v, data.dir, feats.dir, tr.dir / "model.pt"))
            cap_keys[v] = cap.output_hash()
        if last >= STAGES.index("evaluate"):
            cap_dirs = {v: work / "caption" / v for v in cfg.variants}

            def gather(out):
                for v, d in cap_dirs.items():
                    (out / f"{v}.jsonl").write_bytes((d / f"{v}.jsonl").read_bytes())

            # evaluate/analyze read one merged caption directory
            merged = run("captions", cap_keys, gather)
            run("evaluate", {"captions": merged.output_hash(), "data": data.output_hash(),
                             "metrics": cfg.metrics, "split": cfg.decode.split},
                lambda out: stage_evaluate(cfg, out, data.dir, merged.dir))
        if last >= STAGES.index("analyze"):
            lex = file_hash(cfg.paths.lexicon) if cfg.paths.lexicon else None
            run("analyze", {"captions": merged.output_hash(), "data": data.output_hash(), "lexicon": lex,
                            "split": cfg.decode.split, "tagger": default_tagger() is not None},
                lambda out: stage_analyze(cfg, out, data.dir, merged.dir))
    except Exception as exc:
        log.error("pipeline failed: %s: %s", type(exc).__name__, exc)
        summary["error"] = f"{type(exc).__name__}: {exc}"
        (work / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return 1, summary
    return _done(work, summary)


def _done(work, summary):
    (work / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0, summary


def fixture_config(fixture_dir, work_dir, variants=None, epochs=30):
    """Small, fast settings for the synthetic fixture."""
    fixture_dir = Path(fixture_dir)
    return RunConfig.from_dict({
        "paths": {"manifest": str(fixture_dir / "manifest.jsonl"), "work_dir": str(work_dir),
                  "fer_csv": str(fixture_dir / "fer.csv"), "lexicon": str(fixture_dir / "lexicon.tsv")},
        "variants": list(variants or VARIANTS),
        "model": {"embed_dim": 32, "hidden_dim": 64, "att_dim": 32},
        "train": {"epoch_limit": epochs, "batch_size": 25, "lr0": 5e-3, "selection_metric": "loss"},
        "data": {"min_count": 1},
        "fer": {"model": {"blocks": [[8, 1], [16, 1], [32, 1], [32, 1]], "fc_hidden": [64]},
                "train": {"epochs": 8, "batch_size": 32}},
        "features": {"backbone": "pixel-projection", "backbone_args": {"grid": 7, "dim": 32}},
        "decode": {"split": "test"},
        "metrics": ["bleu", "rougeL", "cider"],
    })
