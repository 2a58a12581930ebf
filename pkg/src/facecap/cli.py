"""Command-line entry point: ``facecap <subcommand> ...``.

Results go to ``--out`` when given, otherwise to stdout, always as JSON or
JSON-lines. External tools are configured with FACECAP_TAGGER_CMD,
FACECAP_METEOR_CMD and FACECAP_SPICE_CMD.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DataError, EnvironmentUnavailable, InputError, NumericError

log = logging.getLogger("facecap")


def emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


# --- fer ------------------------------------------------------------------------------------

def cmd_fer_train(args):
    from .features import (FerModelConfig, FerTrainConfig, drop_black, prepare_fer_splits, read_fer2013,
                           save_fer, train_fer)

    splits = {k: drop_black(v) for k, v in read_fer2013(args.data).items()}
    train, dev, test = prepare_fer_splits(splits, seed=args.seed)
    if args.max_samples and len(train) > args.max_samples:
        idx = np.sort(np.random.default_rng(args.seed).permutation(len(train))[:args.max_samples])
        train = train.subset(idx)
    mcfg = FerModelConfig(**(json.loads(args.model_json) if args.model_json else {}))
    tcfg = FerTrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                          augment=args.augment)
    model = train_fer(train, dev, mcfg, tcfg, test=test)
    save_fer(model, args.out)
    emit({"checkpoint": str(args.out), "train_size": len(train), "dev_size": len(dev),
          "test_size": 0 if test is None else len(test), **model.report})


# --- features -------------------------------------------------------------------------------

def cmd_features_extract(args):
    from .data import read_manifest
    from .features import extract_manifest, get_backbone, get_detector, load_fer

    records = read_manifest(args.images)
    root = args.root or str(Path(args.images).parent)
    backbone = get_backbone(args.backbone, **(json.loads(args.backbone_args) if args.backbone_args else {}))
    done = extract_manifest(records, args.out, get_detector(args.detector), load_fer(args.fer), backbone,
                            workers=args.workers, root=root)
    emit({"features": str(args.out), "images": len(done)})


# --- data -----------------------------------------------------------------------------------

def cmd_data_subset(args):
    from .data import build_face_subset, read_manifest, write_manifest
    from .features import get_detector

    records = read_manifest(args.manifest)
    kept, skipped = build_face_subset(records, get_detector(args.detector),
                                      root=args.root or str(Path(args.manifest).parent))
    write_manifest(kept, args.out)
    emit({"input": len(records), "kept": len(kept), "skipped": skipped, "out": str(args.out)})


def cmd_data_split(args):
    from .data import SPLITS, read_manifest, split_dataset, write_manifest

    records = split_dataset(read_manifest(args.manifest), args.seed)
    write_manifest(records, args.out)
    emit({s: sum(r["split"] == s for r in records) for s in SPLITS})


def cmd_data_vocab(args):
    from .data import build_vocabulary, read_manifest

    vocab = build_vocabulary(read_manifest(args.manifest), args.min_count)
    vocab.save(args.out)
    emit({"vocab_size": len(vocab), "out": str(args.out)})


# --- train / caption ------------------------------------------------------------------------

def _run_config(args):
    from .pipeline import RunConfig

    cfg = RunConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args):
    from .batching import FeatureCache, make_examples
    from .data import Vocabulary, read_manifest
    from .models import build_model, save_checkpoint
    from .pipeline import feature_dims, run_pipeline, set_seed
    from .training import train

    cfg = _run_config(args)
    if args.variant not in cfg.variants:
        cfg.variants = [args.variant]
        cfg.model_overrides = {k: v for k, v in cfg.model_overrides.items() if k == args.variant}
    work = Path(cfg.paths.work_dir)
    if args.manifest:
        manifest, vocab_path, feat_dir = Path(args.manifest), Path(args.vocab), Path(args.features)
    else:
        status, _ = run_pipeline(cfg, until="features")
        if status:
            raise DataError("preparing data and features failed; see FAILED markers under " + str(work))
        manifest, vocab_path = work / "data" / "manifest.jsonl", work / "data" / "vocab.json"
        feat_dir = work / "features" / "feats"
    records, vocab = read_manifest(manifest), Vocabulary.load(vocab_path)
    features = FeatureCache(feat_dir)
    dims = feature_dims(features, records[0]["image_id"])
    mcfg = cfg.model_config(args.variant, len(vocab), **dims)
    tcfg = cfg.train_config(args.variant)
    if args.epochs:
        tcfg.epoch_limit = args.epochs
    tr = make_examples(records, features, vocab, "train", cfg.data.train_captions_per_image, cfg.data.max_len)
    va = make_examples(records, features, vocab, "val", None, cfg.data.max_len)
    set_seed(cfg.seed)
    model = build_model(mcfg)
    _, tlog = train(model, tr, va, vocab, tcfg)
    out = Path(args.out or work / "train" / args.variant / "model.pt")
    save_checkpoint(out, model, vocab, extra={"train": tcfg.to_dict()})
    emit({"checkpoint": str(out), "log": tlog.to_dict()}, args.log)
    if args.log:
        emit({"checkpoint": str(out), "epochs": len(tlog.epochs)})


def cmd_caption(args):
    from .batching import FeatureCache, image_examples
    from .data import read_manifest
    from .models import load_checkpoint
    from .pipeline import caption_examples, write_captions

    model, vocab, _ = load_checkpoint(args.ckpt)
    if vocab is None:
        raise CheckpointError(f"{args.ckpt} carries no vocabulary")
    features = FeatureCache(args.features)
    if args.manifest:
        records = read_manifest(args.manifest)
    else:
        ids = sorted(json.loads(p.read_text())["image_id"] for p in Path(args.features).glob("*.json"))
        records = [{"image_id": i, "captions": ["-"]} for i in ids]
    exs = image_examples(records, features, args.split)
    if not exs:
        raise InputError("no images to caption")
    caps = caption_examples(model, vocab, exs, args.mode, args.max_len)
    if args.out:
        write_captions(caps, args.out, model.cfg.variant)
        emit({"captions": len(caps), "out": str(args.out)})
    else:
        for image_id in sorted(caps):
            print(json.dumps({"image_id": image_id, "caption": caps[image_id], "variant": model.cfg.variant},
                             sort_keys=True))


# --- evaluate / analyze ---------------------------------------------------------------------

def cmd_evaluate(args):
    from .data import read_manifest
    from .metrics import evaluate
    from .pipeline import read_captions, references_for

    cands = read_captions(args.candidates)
    refs = references_for(read_manifest(args.references), args.split)
    if args.split:
        cands = {k: v for k, v in cands.items() if k in refs}
    report = evaluate(cands, refs, tuple(csv_list(args.metrics)))
    emit(report.to_dict(), args.out)


def cmd_analyze_verbs(args):
    from .analysis import default_tagger, load_lexicon, verb_report
    from .data import read_manifest
    from .pipeline import read_captions

    if args.references:
        caps = [c for r in read_manifest(args.captions) if not args.split or r.get("split") == args.split
                for c in r["captions"]]
    else:
        caps = list(read_captions(args.captions).values())
    lexicon = load_lexicon(args.lexicon) if args.lexicon else None
    report = verb_report(caps, default_tagger(args.tagger_cmd), lexicon, tuple(csv_list(args.query_verbs)))
    emit(report, args.out)


# --- pipeline / fixture ---------------------------------------------------------------------

def cmd_pipeline(args):
    from .pipeline import run_pipeline

    cfg = _run_config(args)
    if args.print_config:
        emit(cfg.effective())
        return 0
    status, summary = run_pipeline(cfg, until=args.until, force=args.force)
    emit(summary)
    return status


def cmd_fixture(args):
    from .fixture import make_fixture
    from .pipeline import fixture_config

    out = make_fixture(args.out, n_images=args.images, seed=args.seed)
    cfg = fixture_config(out, args.work_dir or out / "run", epochs=args.epochs)
    cfg.save(out / "run.json")
    emit({"fixture": str(out), "config": str(out / "run.json")})


def build_parser():
    from .analysis import QUERY_VERBS
    from .models import VARIANTS
    from .pipeline import STAGES

    p = argparse.ArgumentParser(prog="facecap", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    fer = sub.add_parser("fer", help="facial expression network").add_subparsers(dest="action", required=True)
    f = fer.add_parser("train", help="train on a FER-2013 style CSV")
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--epochs", type=int, default=10)
    f.add_argument("--batch-size", type=int, default=64)
    f.add_argument("--lr", type=float, default=1e-3)
    f.add_argument("--max-samples", type=int, default=None, help="subsample the training split")
    f.add_argument("--augment", action="store_true", help="random horizontal flips")
    f.add_argument("--model-json", default=None, help="FerModelConfig fields as JSON")
    f.set_defaults(func=cmd_fer_train)

    feats = sub.add_parser("features", help="per-image features").add_subparsers(dest="action", required=True)
    f = feats.add_parser("extract")
    f.add_argument("--images", required=True, help="manifest JSON-lines")
    f.add_argument("--fer", required=True, help="FER checkpoint")
    f.add_argument("--backbone", default="pixel-projection")
    f.add_argument("--backbone-args", default=None, help="constructor kwargs as JSON")
    f.add_argument("--detector", default="marker")
    f.add_argument("--root", default=None, help="base for relative image paths")
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_features_extract)

    data = sub.add_parser("data", help="manifests, splits, vocabulary").add_subparsers(dest="action",
                                                                                       required=True)
    f = data.add_parser("build-subset", help="keep images with at least one detected face")
    f.add_argument("--manifest", required=True)
    f.add_argument("--detector", default="marker")
    f.add_argument("--root", default=None)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_data_subset)
    f = data.add_parser("split")
    f.add_argument("--manifest", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_data_split)
    f = data.add_parser("vocab")
    f.add_argument("--manifest", required=True)
    f.add_argument("--min-count", type=int, default=5)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_data_vocab)

    f = sub.add_parser("train", help="train one caption model")
    f.add_argument("--variant", required=True, choices=VARIANTS)
    f.add_argument("--config", required=True, help="run config JSON")
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--epochs", type=int, default=None, help="override train.epoch_limit")
    f.add_argument("--manifest", default=None, help="split manifest (skips the data stages)")
    f.add_argument("--vocab", default=None)
    f.add_argument("--features", default=None)
    f.add_argument("--out", default=None, help="checkpoint path")
    f.add_argument("--log", default=None, help="write the training log here")
    f.set_defaults(func=cmd_train)

    f = sub.add_parser("caption", help="decode captions from a checkpoint")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--features", required=True)
    f.add_argument("--manifest", default=None)
    f.add_argument("--split", default=None)
    f.add_argument("--mode", default="greedy", help="greedy or beam:K")
    f.add_argument("--max-len", type=int, default=20)
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_caption)

    f = sub.add_parser("evaluate", help="caption metrics")
    f.add_argument("--candidates", required=True)
    f.add_argument("--references", required=True, help="manifest JSON-lines")
    f.add_argument("--split", default=None)
    f.add_argument("--metrics", default="bleu,rougeL,cider")
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_evaluate)

    ana = sub.add_parser("analyze", help="linguistic analysis").add_subparsers(dest="action", required=True)
    f = ana.add_parser("verbs")
    f.add_argument("--captions", required=True, help="captions JSON-lines, or a manifest with --references")
    f.add_argument("--references", action="store_true", help="analyze manifest reference captions")
    f.add_argument("--split", default=None)
    f.add_argument("--tagger-cmd", default=None)
    f.add_argument("--lexicon", default=None)
    f.add_argument("--query-verbs", default=",".join(QUERY_VERBS))
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_analyze_verbs)

    f = sub.add_parser("pipeline", help="run every stage from a config")
    f.add_argument("--config", required=True)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--until", choices=STAGES, default=None)
    f.add_argument("--force", action="store_true", help="rerun up-to-date stages")
    f.add_argument("--print-config", action="store_true", help="show the effective config and exit")
    f.set_defaults(func=cmd_pipeline)

    f = sub.add_parser("fixture", help="write the synthetic fixture and a run config for it")
    f.add_argument("--out", required=True)
    f.add_argument("--images", type=int, default=50)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--epochs", type=int, default=30)
    f.add_argument("--work-dir", default=None)
    f.set_defaults(func=cmd_fixture)
    return p


EXIT_CODES = ((InputError, 2), (DataError, 2), (CheckpointError, 2), (FileNotFoundError, 2),
              (EnvironmentUnavailable, 3), (NumericError, 4))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        status = args.func(args)
    except tuple(e for e, _ in EXIT_CODES) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return next(code for e, code in EXIT_CODES if isinstance(exc, e))
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
