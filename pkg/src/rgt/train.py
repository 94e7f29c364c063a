"""Training loop closing the attention -> boxes -> radiomics feedback, plus evaluation."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import AdamW, backward, cosine_with_warmup, no_grad
from .autodiff import serialize
from .boxes import BoundingBox
from .byoa import ByoaConfig, ClassBoxPrior, boxes_or_fallback, byoa
from .config import RunConfig
from .data import NormStats, TrainSample, dataset_stats, map_to_original, preprocess
from .losses import combined_loss, focal_loss, nt_xent
from .metrics import iou_accuracy, per_class_auc, records_from_boxes
from .model import RGT, cls_attention_map
from .radiomics import NUM_FEATURES, ExtractionSettings, extract_all

log = logging.getLogger("rgt.train")

LOG_FIELDS = ("epoch", "loss", "focal", "contrastive", "fallback_rate", "lr")


class NumericalError(RuntimeError):
    """Non-finite loss; a diagnostic dump has been written."""


class RadiomicsStandardizer:
    """Signed log1p, then a z-score with exponential running statistics.

    Statistics update on training batches only and are frozen otherwise;
    outputs are clipped to +-``clip``.
    """

    def __init__(self, n: int = NUM_FEATURES, momentum: float = 0.1, clip: float = 5.0):
        self.momentum = momentum
        self.clip = clip
        self.mean = np.zeros(n)
        self.var = np.ones(n)
        self.initialized = False

    @staticmethod
    def compress(raw: np.ndarray) -> np.ndarray:
        return np.sign(raw) * np.log1p(np.abs(raw))

    def __call__(self, raw: np.ndarray, update: bool = False) -> np.ndarray:
        x = self.compress(np.asarray(raw, dtype=np.float64))
        if update:
            m, v = x.mean(axis=0), x.var(axis=0)
            if not self.initialized:
                self.mean, self.var, self.initialized = m, v, True
            else:
                self.mean = (1 - self.momentum) * self.mean + self.momentum * m
                self.var = (1 - self.momentum) * self.var + self.momentum * v
        z = (x - self.mean) / np.sqrt(self.var + 1e-6)
        return np.clip(z, -self.clip, self.clip)

    def state(self) -> Dict[str, np.ndarray]:
        return {"mean": self.mean, "var": self.var}

    def load(self, state: Dict[str, np.ndarray]) -> None:
        self.mean = np.asarray(state["mean"], dtype=np.float64)
        self.var = np.asarray(state["var"], dtype=np.float64)
        self.initialized = True


class RadiomicsCache:
    """Feature vectors keyed by (sample id, box, flipped)."""

    def __init__(self, settings: ExtractionSettings):
        self.settings = settings
        self.table: Dict[tuple, np.ndarray] = {}
        self.hits = 0

    def get(self, key_id: str, raw: np.ndarray, box: BoundingBox, flipped: bool) -> np.ndarray:
        key = (key_id, box.as_tuple(), flipped)
        vec = self.table.get(key)
        if vec is None:
            vec = extract_all(raw, box, self.settings)
            self.table[key] = vec
        else:
            self.hits += 1
        return vec


def training_box(amap: np.ndarray, labels: np.ndarray, priors: Dict[int, ClassBoxPrior],
                 cfg: ByoaConfig) -> Tuple[BoundingBox, bool]:
    """Top BYOA box for the first positive class; the relaxed box for negatives."""
    h, w = amap.shape
    pos = np.flatnonzero(labels)
    if pos.size:
        c = int(pos[0])
        boxes = byoa(amap, priors[c], c, dataclasses.replace(cfg, mode="train"))
    else:
        c = 0
        boxes = byoa(amap, priors[min(priors)], c, dataclasses.replace(cfg, mode="test"))
    boxes, fell_back = boxes_or_fallback(boxes, h, w, c)
    return boxes[0], fell_back


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


@dataclass
class EpochStats:
    epoch: int
    loss: float
    focal: float
    contrastive: float
    fallback_rate: float
    lr: float

    def row(self) -> List[str]:
        return [str(self.epoch)] + [f"{getattr(self, k):.6f}" for k in LOG_FIELDS[1:]]


@dataclass
class Trained:
    model: RGT
    standardizer: RadiomicsStandardizer
    stats: NormStats
    history: List[EpochStats]


def _labels(samples: Sequence[TrainSample]) -> np.ndarray:
    return np.stack([np.asarray(s.labels, dtype=np.int64) for s in samples])


def _nan_dump(out_dir: Optional[str], info: dict) -> None:
    if not out_dir:
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "nan_dump.json"), "w") as fh:
        json.dump(info, fh, indent=1, default=float)


def train(cfg: RunConfig, samples: Sequence[TrainSample], priors: Dict[int, ClassBoxPrior],
          out_dir: Optional[str] = None) -> Trained:
    """Fit an RGT model with image-level labels only."""
    if not samples:
        raise ValueError("no training samples")
    tc, mc = cfg.train, cfg.model
    missing = [c for c in range(mc.num_classes) if c not in priors]
    if missing:
        raise ValueError(f"no box prior for class {missing[0]}")
    if mc.num_radiomics != NUM_FEATURES:
        raise ValueError(f"model.num_radiomics must be {NUM_FEATURES} to train on extracted features")
    rng = np.random.default_rng(cfg.seed)
    model = RGT(mc, seed=cfg.seed)
    opt = AdamW(model.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    stats = dataset_stats([s.image for s in samples])
    standardizer = RadiomicsStandardizer(mc.num_radiomics, tc.radiomics_momentum, tc.radiomics_clip)
    cache = RadiomicsCache(ExtractionSettings(tc.bin_width))
    labels_all = _labels(samples)
    steps_per_epoch = math.ceil(len(samples) / tc.batch_size)
    total = steps_per_epoch * tc.epochs
    warmup = steps_per_epoch * tc.warmup_epochs
    size = mc.image_size
    history: List[EpochStats] = []
    step = 0
    writer = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "metrics.csv"), "w", newline="")
        writer = csv.writer(log_fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
    try:
        for epoch in range(1, tc.epochs + 1):
            model.train()
            t0 = time.perf_counter()
            order = rng.permutation(len(samples))
            sums = np.zeros(3)
            fallbacks = 0
            lr = tc.lr
            for start in range(0, len(order), tc.batch_size):
                idx = order[start:start + tc.batch_size]
                views = [preprocess(samples[i].image, size, "train", stats, rng, tc.flip_prob)
                         for i in idx]
                x = np.stack([v.x for v in views]).astype(mc.np_dtype)
                y = labels_all[idx]
                img_out = model.image(x, rng)
                if epoch <= tc.cold_start_epochs:
                    boxes = [BoundingBox.whole_image(size, size)] * len(idx)
                else:
                    maps = cls_attention_map(img_out, mc)
                    picked = [training_box(m, lab, priors, cfg.byoa) for m, lab in zip(maps, y)]
                    boxes = [b for b, _ in picked]
                    fallbacks += sum(f for _, f in picked)
                raw = np.stack([cache.get(samples[i].sample_id, v.raw, b, v.flipped)
                                for i, v, b in zip(idx, views, boxes)])
                rad = standardizer(raw, update=True).astype(mc.np_dtype)
                out = model.heads(img_out, model.radiomics(rad, rng))
                l_fl = focal_loss(out.probs, y, cfg.focal)
                l_cl = nt_xent(out.z_i, out.z_r, cfg.contrastive)
                loss = combined_loss(l_cl, l_fl, cfg.loss)
                values = (loss.item(), l_fl.item(), l_cl.item())
                if not all(map(math.isfinite, values)):
                    _nan_dump(out_dir, {"epoch": epoch, "step": step, "loss": values[0],
                                        "focal": values[1], "contrastive": values[2],
                                        "batch": [samples[i].sample_id for i in idx],
                                        "param_norms": {n: float(np.linalg.norm(p.data))
                                                        for n, p in model.named_parameters()}})
                    raise NumericalError(f"non-finite loss at epoch {epoch} step {step}")
                opt.zero_grad()
                backward(loss)
                if tc.grad_clip:
                    clip_grad_norm(model.parameters(), tc.grad_clip)
                lr = cosine_with_warmup(step, total, warmup, tc.lr, tc.min_lr)
                opt.step(lr)
                sums += np.array(values) * len(idx)
                step += 1
            mean = sums / len(samples)
            rate = fallbacks / len(samples) if epoch > tc.cold_start_epochs else 0.0
            rec = EpochStats(epoch, *map(float, mean), float(rate), float(lr))
            history.append(rec)
            if writer:
                writer.writerow(rec.row())
                log_fh.flush()
            log.info("epoch %d loss %.4f focal %.4f contrastive %.4f fallback %.2f (%.1fs)",
                     epoch, *mean, rate, time.perf_counter() - t0)
    finally:
        if writer:
            log_fh.close()
    model.eval()
    trained = Trained(model, standardizer, stats, history)
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "checkpoint"), trained, cfg)
    return trained


# ------------------------------------------------------------------ evaluation
@dataclass
class Prediction:
    sample_id: str
    probs: np.ndarray
    boxes: List[BoundingBox]  # relaxed boxes for every class
    attention: np.ndarray  # map on the original image grid


def predict(trained: Trained, cfg: RunConfig, samples: Sequence[TrainSample],
            priors: Dict[int, ClassBoxPrior], batch_size: int = 64) -> List[Prediction]:
    """Eval-mode forward: boxes from the relaxed BYOA, radiomics from the top box."""
    mc = cfg.model
    model = trained.model.eval()
    settings = ExtractionSettings(cfg.train.bin_width)
    test_cfg = dataclasses.replace(cfg.byoa, mode="test")
    out: List[Prediction] = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            views = [preprocess(s.image, mc.image_size, "eval", trained.stats) for s in chunk]
            x = np.stack([v.x for v in views]).astype(mc.np_dtype)
            img_out = model.image(x)
            maps = cls_attention_map(img_out, mc)
            feats, per_image = [], []
            for s, v, m in zip(chunk, views, maps):
                h, w = s.image.shape
                amap = map_to_original(m, v, h, w)
                boxes = []
                for c in range(mc.num_classes):
                    boxes += byoa(amap, priors[c], c, test_cfg)
                ranked = sorted(boxes, key=lambda b: -b.score)
                top = ranked[0] if ranked else BoundingBox.whole_image(h, w)
                feats.append(extract_all(s.image, top, settings))
                per_image.append((boxes, amap))
            rad = trained.standardizer(np.stack(feats)).astype(mc.np_dtype)
            probs = model.heads(img_out, model.radiomics(rad)).probs.data
            for s, p, (boxes, amap) in zip(chunk, probs, per_image):
                out.append(Prediction(s.sample_id, p.astype(np.float64), boxes, amap))
    return out


@dataclass
class EvalSummary:
    aucs: List[float]
    mean_auc: float
    iou_acc: Dict[float, float]


def evaluate(preds: Sequence[Prediction], labels: Dict[str, np.ndarray],
             gt: Optional[Dict[str, List[BoundingBox]]] = None,
             thresholds=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)) -> EvalSummary:
    ids = [p.sample_id for p in preds]
    scores = np.stack([p.probs for p in preds])
    y = np.stack([labels[i] for i in ids])
    aucs, mean = per_class_auc(scores, y)
    acc = {}
    if gt is not None:
        records = records_from_boxes(gt, {p.sample_id: p.boxes for p in preds})
        if records:
            acc = {t: iou_accuracy(records, t)[1] for t in thresholds}
    return EvalSummary(aucs, mean, acc)


def write_predictions(preds: Sequence[Prediction], class_names: Sequence[str], out_dir: str):
    """Score and box files in the formats read by the report commands."""
    os.makedirs(out_dir, exist_ok=True)
    score_path = os.path.join(out_dir, "pred_scores.json")
    box_path = os.path.join(out_dir, "pred_boxes.json")
    with open(score_path, "w") as fh:
        json.dump({"classes": list(class_names),
                   "scores": {p.sample_id: [round(float(v), 8) for v in p.probs] for p in preds}},
                  fh, indent=1)
    with open(box_path, "w") as fh:
        json.dump({"classes": list(class_names),
                   "boxes": {p.sample_id: [b.to_json() for b in p.boxes] for p in preds}},
                  fh, indent=1)
    return score_path, box_path


# ------------------------------------------------------------------ checkpoints
def save_checkpoint(path: str, trained: Trained, cfg: RunConfig) -> None:
    os.makedirs(path, exist_ok=True)
    names, arrays = [], []
    for n, p in trained.model.named_parameters():
        names.append(n)
        arrays.append(p.data)
    st = trained.standardizer.state()
    arrays += [st["mean"], st["var"]]
    serialize.save(os.path.join(path, "weights.rgt"), arrays)
    manifest = {"format": "RGT1", "config": cfg.to_json(), "parameters": names,
                "extra": ["radiomics_mean", "radiomics_var"],
                "norm_stats": dataclasses.asdict(trained.stats),
                "epochs": len(trained.history)}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_checkpoint(path: str) -> Tuple[Trained, RunConfig]:
    from .config import from_dict

    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    cfg = from_dict(manifest["config"])
    arrays = serialize.load_all(os.path.join(path, "weights.rgt"))
    names = manifest["parameters"]
    if len(arrays) != len(names) + 2:
        raise ValueError(f"{path}: expected {len(names) + 2} arrays, found {len(arrays)}")
    model = RGT(cfg.model, seed=cfg.seed)
    model.load_state_dict(dict(zip(names, arrays)))
    std = RadiomicsStandardizer(cfg.model.num_radiomics, cfg.train.radiomics_momentum,
                                cfg.train.radiomics_clip)
    std.load({"mean": arrays[-2], "var": arrays[-1]})
    return Trained(model.eval(), std, NormStats(**manifest["norm_stats"]), []), cfg


# ------------------------------------------------------------------ ablation
SWEEP_PARAMS = {"lambda": ("loss", "lam"), "T": ("byoa", "keep_fraction")}


def sweep(cfg: RunConfig, param: str, values: Sequence[float], train_set, test_set,
          priors, gt=None, out_dir: Optional[str] = None, threshold: float = 0.1):
    """Train once per value; rows of (param, value, final loss, mean AUC, IoU accuracy)."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"sweep parameter must be one of {tuple(SWEEP_PARAMS)}")
    section, key = SWEEP_PARAMS[param]
    labels = {s.sample_id: np.asarray(s.labels) for s in test_set}
    rows = []
    for v in values:
        run_cfg = cfg.with_overrides(**{section: {key: float(v)}})
        run_dir = os.path.join(out_dir, f"{param}={v:g}") if out_dir else None
        trained = train(run_cfg, train_set, priors, run_dir)
        summary = evaluate(predict(trained, run_cfg, test_set, priors), labels, gt, (threshold,))
        rows.append((param, float(v), trained.history[-1].loss, summary.mean_auc,
                     summary.iou_acc.get(threshold, float("nan"))))
    text = sweep_csv(rows, threshold)
    if out_dir:
        with open(os.path.join(out_dir, f"sweep_{param}.csv"), "w") as fh:
            fh.write(text)
    return rows, text


def sweep_csv(rows, threshold: float = 0.1) -> str:
    lines = [f"param,value,final_loss,mean_auc,iou_acc@{threshold:g}"]
    lines += [f"{p},{v:g},{loss:.6f},{auc:.4f},{acc:.4f}" for p, v, loss, auc, acc in rows]
    return "\n".join(lines) + "\n"
