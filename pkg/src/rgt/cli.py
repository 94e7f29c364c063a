"""Command-line entry point: ``rgt <command> ...``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
Failures print one line ``error: <kind>: <message>`` on stderr.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from . import config as config_mod
from .autodiff import serialize
from .boxes import parse_box
from .byoa import ByoaConfig, byoa, load_priors, overlay
from .config import ConfigError, RunConfig
from .data import (CLASS_NAMES, generate_synthetic, load_png, read_manifest,
                   write_corpus)
from .metrics import (DEFAULT_THRESHOLDS, align, classification_report, load_box_file,
                      load_score_file, localization_report, records_from_boxes)
from .radiomics import ExtractionSettings, extract_all, to_csv, to_json

log = logging.getLogger("rgt")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(ValueError):
    """Unreadable or inconsistent input data."""


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _write(path: str, text: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


# ------------------------------------------------------------------ config resolution
def resolve_config(args, overrides: Dict[str, dict]) -> RunConfig:
    """Built-in defaults < config file < command-line flags; the result is logged."""
    cfg = config_mod.load(args.config) if getattr(args, "config", None) else RunConfig()
    source = args.config if getattr(args, "config", None) else "defaults"
    applied = {k: v for k, v in overrides.items() if v not in (None, {})}
    if applied:
        cfg = cfg.with_overrides(**applied)
    log.info("config from %s; flag overrides: %s", source,
             json.dumps(applied, sort_keys=True) if applied else "none")
    return cfg


def _priors_path(cfg: RunConfig) -> str:
    return cfg.priors or os.path.join(cfg.data_dir, "priors.json")


def _load_priors(path: str):
    try:
        return load_priors(path)
    except OSError as e:
        raise DataError(f"cannot read priors {path}: {e.strerror}") from None
    except (KeyError, ValueError, TypeError) as e:
        raise DataError(f"bad priors file {path}: {e}") from None


def _manifest(path: str):
    if not os.path.exists(path):
        raise DataError(f"missing manifest {path}; run gen-data first")
    samples = read_manifest(path)
    if not samples:
        raise DataError(f"empty manifest {path}")
    return samples


# ------------------------------------------------------------------ commands
def cmd_extract(args) -> int:
    try:
        image = load_png(args.image)
    except OSError as e:
        raise DataError(f"cannot read {args.image}: {e}") from None
    vec = extract_all(image, parse_box(args.box), ExtractionSettings(args.bin_width))
    text = to_csv([vec], [os.path.basename(args.image)]) if args.out.endswith(".csv") \
        else to_json(vec) + "\n"
    _write(args.out, text)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args, {"data": {"seed": args.seed} if args.seed is not None else {},
                                "data_dir": args.out})
    corpus = generate_synthetic(cfg.data)
    paths = write_corpus(corpus, cfg.data_dir, cfg.data)
    for split, items in corpus.items():
        labels = {s.sample_id: [int(v) for v in s.labels] for s in items}
        _write(os.path.join(cfg.data_dir, f"{split}_labels.json"),
               json.dumps({"classes": list(CLASS_NAMES), "labels": labels}, indent=1))
    print(json.dumps({"data_dir": cfg.data_dir, "priors": paths["priors"],
                      "counts": {k: len(v) for k, v in corpus.items()}}, sort_keys=True))
    return EXIT_OK


def _train_overrides(args) -> Dict[str, object]:
    return {"loss": {"lam": args.lam} if args.lam is not None else {},
            "byoa": {"keep_fraction": args.byoa_t} if args.byoa_t is not None else {},
            "seed": args.seed, "output_dir": args.out, "data_dir": args.data}


def _load_split(cfg: RunConfig, split: str):
    path = os.path.join(cfg.data_dir, f"{split}.jsonl")
    return _manifest(path) if os.path.exists(path) else []


def _load_gt(cfg: RunConfig, split: str):
    path = os.path.join(cfg.data_dir, f"{split}_gt.json")
    return load_box_file(path)[1] if os.path.exists(path) else None


def cmd_train(args) -> int:
    from .train import evaluate, predict, train, write_predictions

    cfg = resolve_config(args, _train_overrides(args))
    train_set = _manifest(os.path.join(cfg.data_dir, "train.jsonl"))
    priors = _load_priors(_priors_path(cfg))
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "config.json"), cfg.dumps() + "\n")
    trained = train(cfg, train_set, priors, out)
    last = trained.history[-1]
    line = {"epoch": last.epoch, "loss": round(last.loss, 6), "focal": round(last.focal, 6),
            "contrastive": round(last.contrastive, 6),
            "fallback_rate": round(last.fallback_rate, 6)}
    test_set = _load_split(cfg, "test")
    if test_set:
        preds = predict(trained, cfg, test_set, priors)
        names = list(CLASS_NAMES[:cfg.model.num_classes])
        write_predictions(preds, names, out)
        gt = _load_gt(cfg, "test")
        summary = evaluate(preds, {s.sample_id: np.asarray(s.labels) for s in test_set}, gt)
        line["test_mean_auc"] = round(summary.mean_auc, 6)
        if summary.iou_acc:
            line["test_iou_acc@0.1"] = round(summary.iou_acc[0.1], 6)
            recs = records_from_boxes(gt, {p.sample_id: p.boxes for p in preds})
            csv_text, md = localization_report(recs, names)
            _write(os.path.join(out, "localization.csv"), csv_text)
            _write(os.path.join(out, "localization.md"), md)
    print(json.dumps(line, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .train import sweep

    cfg = resolve_config(args, {"seed": args.seed, "output_dir": args.out,
                                "data_dir": args.data})
    train_set = _manifest(os.path.join(cfg.data_dir, "train.jsonl"))
    test_set = _manifest(os.path.join(cfg.data_dir, "test.jsonl"))
    priors = _load_priors(_priors_path(cfg))
    _, text = sweep(cfg, args.param, args.values, train_set, test_set, priors,
                    _load_gt(cfg, "test"), cfg.output_dir)
    sys.stdout.write(text)
    return EXIT_OK


def _read_map(path: str) -> np.ndarray:
    try:
        amap = load_png(path) if path.lower().endswith(".png") else serialize.load(path)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    except ValueError as e:
        raise DataError(f"bad attention map {path}: {e}") from None
    amap = np.asarray(amap, dtype=np.float64)
    if amap.ndim != 2 or not np.all(np.isfinite(amap)) or amap.min() < 0:
        raise DataError(f"{path}: attention map must be a finite non-negative 2-D array")
    return amap


def cmd_byoa(args) -> int:
    amap = _read_map(args.map)
    priors = _load_priors(args.priors)
    if args.cls not in priors:
        raise DataError(f"no prior for class {args.cls} in {args.priors}")
    cfg = ByoaConfig(keep_fraction=args.keep_fraction, mode=args.mode,
                     connectivity=args.connectivity)
    boxes = byoa(amap, priors[args.cls], args.cls, cfg)
    text = json.dumps([b.to_json() for b in boxes], indent=1) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    if args.overlay:
        base = load_png(args.image) if args.image else np.zeros_like(amap)
        if base.shape != amap.shape:
            raise DataError(f"image {base.shape} and map {amap.shape} differ in size")
        from PIL import Image
        Image.fromarray(overlay(base, amap, boxes), mode="RGB").save(args.overlay)
    return EXIT_OK


def cmd_eval_loc(args) -> int:
    try:
        names, pred = load_box_file(args.pred)
        gt_names, gt = load_box_file(args.gt)
    except OSError as e:
        raise DataError(f"cannot read {e.filename}: {e.strerror}") from None
    names = gt_names or names
    csv_text, md = localization_report(records_from_boxes(gt, pred), names, args.thresholds,
                                       strict=args.strict)
    _emit_report(args.out, csv_text, md)
    return EXIT_OK


def _labels_file(path: str):
    if path.endswith(".jsonl"):
        rows = read_manifest(path)
        return None, {s.sample_id: [int(v) for v in s.labels] for s in rows}
    return load_score_file(path, "labels")


def cmd_eval_cls(args) -> int:
    try:
        names, labels = _labels_file(args.labels)
        files = [args.pred] if args.pred else []
        if args.seeds_dir:
            files += sorted(glob.glob(os.path.join(args.seeds_dir, "*", "pred_scores.json")))
            files += sorted(glob.glob(os.path.join(args.seeds_dir, "*.json")))
        if not files:
            raise DataError("no prediction files given")
        runs = []
        for f in files:
            pred_names, scores = load_score_file(f, "scores")
            runs.append(align(scores, labels))
            names = names or pred_names
    except OSError as e:
        raise DataError(f"cannot read {e.filename}: {e.strerror}") from None
    csv_text, md = classification_report(runs, names)
    _emit_report(args.out, csv_text, md)
    return EXIT_OK


def _emit_report(prefix: Optional[str], csv_text: str, md: str) -> None:
    if prefix:
        _write(prefix + ".csv", csv_text)
        _write(prefix + ".md", md)
    sys.stdout.write(md)


def cmd_gradcheck(args) -> int:
    from .model import RGTConfig, full_model_gradcheck

    if args.config:
        cfg = config_mod.load(args.config).model
        if cfg.dtype != "float64":
            cfg = RGTConfig(**{**cfg.to_json(), "dtype": "float64"})
    else:
        cfg = RGTConfig.tiny()
    report = full_model_gradcheck(cfg, seed=args.seed)
    modules: Dict[str, float] = {}
    for name, err in report.items():
        key = ".".join(name.split(".")[:2])
        modules[key] = max(modules.get(key, 0.0), err)
    worst = max(report.values())
    print(json.dumps({"max_rel_error": worst, "modules": modules}, indent=1, sort_keys=True))
    return EXIT_OK if worst < args.tol else EXIT_NUMERIC


# ------------------------------------------------------------------ parser
class _Parser(argparse.ArgumentParser):
    """Usage errors become one ``error: usage: ...`` line and exit code 2."""

    def error(self, message):
        print(f"error: usage: {self.prog}: {' '.join(message.split())}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rgt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("extract", help="107 radiomic features of one box")
    s.add_argument("--image", required=True, help="grayscale PNG")
    s.add_argument("--box", required=True, help="x,y,w,h")
    s.add_argument("--out", required=True, help=".json or .csv")
    s.add_argument("--bin-width", type=float, default=25.0)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("gen-data", help="write the synthetic corpus, manifests and priors")
    s.add_argument("--config")
    s.add_argument("--out", help="corpus directory (overrides data_dir)")
    s.add_argument("--seed", type=int, help="corpus seed (overrides data.seed)")
    s.set_defaults(func=cmd_gen_data)

    for name, func, helptext in (("train", cmd_train, "train and evaluate one model"),
                                 ("sweep", cmd_sweep, "ablation sweep over lambda or T")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory (overrides output_dir)")
        s.add_argument("--data", help="corpus directory (overrides data_dir)")
        s.set_defaults(func=func)
        if name == "train":
            s.add_argument("--lambda", dest="lam", type=float, help="loss weight")
            s.add_argument("--byoa-t", type=float, help="BYOA keep fraction")
        else:
            s.add_argument("--param", required=True, choices=("lambda", "T"))
            s.add_argument("--values", required=True, type=_floats)

    s = sub.add_parser("byoa", help="boxes from an attention map")
    s.add_argument("--map", required=True, help="RGT1 tensor or 16-bit PNG")
    s.add_argument("--priors", required=True)
    s.add_argument("--class", dest="cls", type=int, required=True)
    s.add_argument("--mode", choices=("train", "test"), default="train")
    s.add_argument("--keep-fraction", type=float, default=0.1)
    s.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    s.add_argument("--out", help="boxes JSON (stdout if omitted)")
    s.add_argument("--overlay", help="heatmap overlay PNG")
    s.add_argument("--image", help="image drawn under the overlay")
    s.set_defaults(func=cmd_byoa)

    s = sub.add_parser("eval-loc", help="IoU-accuracy table")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--thresholds", type=_floats, default=list(DEFAULT_THRESHOLDS))
    s.add_argument("--strict", action="store_true", help="count IoU > T instead of >= T")
    s.add_argument("--out", help="report path prefix (.csv and .md)")
    s.set_defaults(func=cmd_eval_loc)

    s = sub.add_parser("eval-cls", help="per-class AUC table")
    s.add_argument("--pred")
    s.add_argument("--labels", required=True, help="labels JSON or a JSONL manifest")
    s.add_argument("--seeds-dir", help="directory of per-seed prediction files")
    s.add_argument("--out", help="report path prefix (.csv and .md)")
    s.set_defaults(func=cmd_eval_cls)

    s = sub.add_parser("gradcheck", help="finite-difference check of every parameter")
    s.add_argument("--config", help="run config; its model section is checked in float64")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    from .train import NumericalError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as e:
        kind, code, msg = "config", EXIT_CONFIG, str(e)
    except NumericalError as e:
        kind, code, msg = "numeric", EXIT_NUMERIC, str(e)
    except (DataError, ValueError, KeyError, OSError) as e:
        kind, code, msg = "data", EXIT_DATA, str(e)
    print(f"error: {kind}: {' '.join(msg.split())}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
