"""``cryoseg`` command line.

Exit status: 0 success, 2 invalid input or configuration, 3 runtime failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, ValidationError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3

log = logging.getLogger("cryoseg")


def cmd_prepare(args):
    from .data import load_dataset, make_folds, write_image, write_labels
    from .stain import extract_hematoxylin

    samples = load_dataset(args.data, args.thickness)
    out = Path(args.out)
    (out / "contours").mkdir(parents=True, exist_ok=True)
    (out / "hematoxylin").mkdir(parents=True, exist_ok=True)
    folds = make_folds(samples)
    folds.save(out / "folds.json")
    for s in samples:
        write_image(out / "contours" / f"{s.id}.png", s.contours * 255)
        hema = extract_hematoxylin(s.image)
        write_labels(out / "hematoxylin" / f"{s.id}.png", np.round(hema * 65535))
    print(f"prepared {len(samples)} samples, {len(folds)} folds -> {out}")


def cmd_stain(args):
    from .data import _index_dir, read_image, write_labels
    from .stain import extract_hematoxylin

    files = _index_dir(args.inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for p in files.values():
        hema = extract_hematoxylin(read_image(p))
        write_labels(out / f"{p.stem}.png", np.round(hema * 65535))
        n += 1
    if not n:
        raise ValidationError(f"no images in {args.inp}")
    print(f"wrote {n} hematoxylin maps -> {out}")


def _load_config(path, overrides=()):
    from .pipeline import TrainConfig

    cfg = TrainConfig.load(path).to_dict()
    for item in overrides:
        key, _, value = item.partition("=")
        if key not in cfg:
            raise ValidationError(f"unknown config key {key!r}")
        if isinstance(cfg[key], str):
            cfg[key] = value
            continue
        try:
            cfg[key] = type(cfg[key])(json.loads(value))
        except (ValueError, TypeError) as exc:
            raise ValidationError(f"bad value for {key}: {value!r}") from exc
    return TrainConfig.from_dict(cfg)


def cmd_train(args):
    from .data import FoldSplit, load_dataset, make_folds
    from .pipeline import train_fold

    cfg = _load_config(args.config, args.set)
    if not cfg.data_root:
        raise ValidationError("config has no data_root")
    samples = load_dataset(cfg.data_root, cfg.contour_thickness)
    folds = FoldSplit.load(cfg.folds_file) if cfg.folds_file else make_folds(samples)
    if not 0 <= args.fold < len(folds):
        raise ValidationError(f"fold {args.fold} out of range 0..{len(folds) - 1}")
    by_id = {s.id: s for s in samples}
    out = Path(cfg.out_dir) / f"fold_{args.fold}"
    record = train_fold(
        [by_id[i] for i in folds.train_ids(args.fold)],
        [by_id[i] for i in folds.holdout(args.fold)],
        cfg,
        out,
        fold=args.fold,
    )
    print(f"fold {args.fold}: {len(record.epochs)} epochs, best epoch {record.best_epoch}, "
          f"checkpoint {record.checkpoints[-1]}")


def cmd_infer(args):
    from .pipeline import infer_dir

    written = infer_dir(args.ckpt, args.images, args.out)
    print(f"wrote {len(written)} label maps -> {args.out}")


def cmd_evaluate(args):
    from .pipeline import evaluate_dirs

    reports, agg = evaluate_dirs(args.pred, args.gt, args.out, args.folds)
    o = agg["overall"]
    print(f"{len(reports)} images  AJI {o['aji']:.4f}  PQ {o['pq']:.4f}  Dice {o['dice']:.4f} -> {args.out}")


def cmd_crossval(args):
    from .pipeline import crossval

    cfg = _load_config(args.config, args.set)
    result = crossval(cfg)
    print(result["tables"])


def cmd_config(args):
    from .pipeline import TrainConfig

    TrainConfig(data_root=args.data or "", out_dir=args.runs).save(args.out)
    print(f"wrote default config -> {args.out}")


def cmd_synth(args):
    from .data import DEFAULT_ORGANS, write_synthetic_corpus

    organs = DEFAULT_ORGANS[: args.organs]
    ids = write_synthetic_corpus(args.out, organs, args.per_organ, seed=args.seed)
    print(f"wrote {len(ids)} synthetic samples -> {args.out}")


def build_parser():
    p = argparse.ArgumentParser(prog="cryoseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", help="folds, contour maps and hematoxylin cache")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--thickness", type=int, default=2)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("stain", help="hematoxylin maps as 16-bit images")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stain)

    s = sub.add_parser("train", help="train one fold")
    s.add_argument("--config", required=True)
    s.add_argument("--fold", type=int, required=True)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="predict instance maps")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("evaluate", help="AJI / PQ / Dice report")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--folds", default=None)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("crossval", help="train and evaluate every fold")
    s.add_argument("--config", required=True)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("config", help="write a default config file")
    s.add_argument("--out", required=True)
    s.add_argument("--data", default="")
    s.add_argument("--runs", default="runs")
    s.set_defaults(func=cmd_config)

    s = sub.add_parser("synth", help="write a synthetic CryoNuSeg-shaped corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--organs", type=int, default=10)
    s.add_argument("--per-organ", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        args.func(args)
    except (ValidationError, CheckpointFormatError) as exc:
        print(f"cryoseg: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"cryoseg: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
