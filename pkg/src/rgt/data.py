"""Synthetic weak-supervision corpus, image I/O, preprocessing and splitting."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .boxes import BoundingBox
from .byoa import ClassBoxPrior, priors_to_json

CLASS_NAMES = ("Disk", "Grating")


@dataclass(frozen=True)
class TrainSample:
    """What the trainer sees: no ground-truth boxes."""

    sample_id: str
    image: np.ndarray
    labels: np.ndarray
    patient_id: str


@dataclass(frozen=True)
class Sample:
    sample_id: str
    image: np.ndarray  # uint8 (H, W)
    labels: np.ndarray  # int8 (num_classes,)
    patient_id: str
    gt_boxes: Tuple[BoundingBox, ...] = ()

    def train_view(self) -> TrainSample:
        return TrainSample(self.sample_id, self.image, self.labels, self.patient_id)


@dataclass(frozen=True)
class SyntheticConfig:
    image_size: int = 64
    num_classes: int = 2
    n_train: int = 500
    n_val: int = 0
    n_test: int = 100
    seed: int = 0
    positive_rate: float = 0.4
    background: float = 100.0
    noise_std: float = 10.0
    noise_sigma: float = 1.5
    disk_radius: int = 10
    disk_contrast: float = 60.0
    grating_size: int = 20
    grating_period: int = 4
    grating_contrast: float = 20.0
    grating_amplitude: float = 45.0
    max_images_per_patient: int = 3

    def __post_init__(self):
        if self.num_classes != 2:
            raise ValueError("the synthetic generator has exactly 2 classes")
        d = 2 * self.disk_radius + 1
        if d + self.grating_size + 4 > self.image_size:
            raise ValueError(f"blobs of size {d} and {self.grating_size} do not both fit a "
                             f"{self.image_size} image")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split sizes must be >= 0")
        if not 0 < self.positive_rate < 1:
            raise ValueError("positive_rate must be in (0, 1)")
        if self.grating_period < 2:
            raise ValueError("grating_period must be >= 2")

    def priors(self) -> Dict[int, ClassBoxPrior]:
        d = 2 * self.disk_radius + 1
        return {0: ClassBoxPrior(d, d), 1: ClassBoxPrior(self.grating_size, self.grating_size)}


def _background(rng: np.random.Generator, cfg: SyntheticConfig) -> np.ndarray:
    n = cfg.image_size
    noise = ndimage.gaussian_filter(rng.normal(size=(n, n)), cfg.noise_sigma, mode="wrap")
    noise *= cfg.noise_std / max(noise.std(), 1e-12)
    return cfg.background + noise


def _place(rng, size: int, n: int, taken: List[BoundingBox]) -> BoundingBox:
    """Uniform over the positions clear of every taken box (1-pixel margin)."""
    coords = np.arange(1, n - size)
    ys, xs = np.meshgrid(coords, coords, indexing="ij")
    free = [(int(x), int(y)) for x, y in zip(xs.ravel(), ys.ravel())
            if all(_gap(BoundingBox(int(x), int(y), size, size), t) for t in taken)]
    if not free:
        raise ValueError("blobs do not fit without overlap")
    x, y = free[int(rng.integers(len(free)))]
    return BoundingBox(x, y, size, size)


def _gap(a: BoundingBox, b: BoundingBox) -> bool:
    return a.x1 + 1 < b.x or b.x1 + 1 < a.x or a.y1 + 1 < b.y or b.y1 + 1 < a.y


def render_sample(rng: np.random.Generator, labels: np.ndarray, cfg: SyntheticConfig):
    """Image (float, before rounding) and the per-class ground-truth boxes."""
    img = _background(rng, cfg)
    boxes = []
    if labels[0]:
        d = 2 * cfg.disk_radius + 1
        box = _place(rng, d, cfg.image_size, boxes)
        yy, xx = np.mgrid[:d, :d] - cfg.disk_radius
        disk = yy ** 2 + xx ** 2 <= cfg.disk_radius ** 2
        img[box.y:box.y1, box.x:box.x1] += cfg.disk_contrast * disk
        boxes.append(BoundingBox(box.x, box.y, d, d, 0))
    if labels[1]:
        s = cfg.grating_size
        box = _place(rng, s, cfg.image_size, boxes)
        phase = np.arange(s) % cfg.grating_period < cfg.grating_period // 2
        wave = np.where(phase, 1.0, -1.0)
        pattern = wave[None, :] if rng.random() < 0.5 else wave[:, None]
        img[box.y:box.y1, box.x:box.x1] += cfg.grating_contrast + cfg.grating_amplitude * pattern
        boxes.append(BoundingBox(box.x, box.y, s, s, 1))
    return img, tuple(boxes)


def _split(rng, cfg: SyntheticConfig, split: str, count: int) -> List[Sample]:
    samples: List[Sample] = []
    patient = 0
    while len(samples) < count:
        k = min(int(rng.integers(1, cfg.max_images_per_patient + 1)), count - len(samples))
        pid = f"{split}-p{patient:04d}"
        for _ in range(k):
            labels = (rng.random(cfg.num_classes) < cfg.positive_rate).astype(np.int8)
            img, boxes = render_sample(rng, labels, cfg)
            img = np.clip(np.round(img), 0, 255).astype(np.uint8)
            samples.append(Sample(f"{split}-{len(samples):05d}", img, labels, pid, boxes))
        patient += 1
    return samples


def generate_synthetic(cfg: SyntheticConfig) -> Dict[str, List[Sample]]:
    """Seeded corpus with patient-disjoint train/val/test splits."""
    rng = np.random.default_rng(cfg.seed)
    out = {}
    for split, count in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        out[split] = _split(rng, cfg, split, count)
    return out


# ------------------------------------------------------------------ splitting
def split_by_group(groups: Sequence[str], fractions=(0.7, 0.1, 0.2), seed: int = 0):
    """Assign whole groups to splits; returns one index list per fraction.

    Groups are shuffled, then each goes to the split furthest below its
    target size.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be non-negative and sum to 1")
    members: Dict[str, List[int]] = {}
    for i, g in enumerate(groups):
        members.setdefault(g, []).append(i)
    if len(members) < 3:
        raise ValueError(f"need at least 3 groups, got {len(members)}")
    keys = sorted(members)
    order = np.random.default_rng(seed).permutation(len(keys))
    target = fractions * len(groups)
    filled = np.zeros(len(fractions))
    out: List[List[int]] = [[] for _ in fractions]
    for k in order:
        idx = members[keys[k]]
        s = int(np.argmax(target - filled))
        out[s].extend(idx)
        filled[s] += len(idx)
    return [sorted(o) for o in out]


# ------------------------------------------------------------------ preprocessing
def resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a float image (no-op when the size already matches)."""
    img = np.asarray(img, dtype=np.float32)
    if img.shape == (height, width):
        return img.copy()
    return np.asarray(Image.fromarray(img, mode="F").resize((width, height), Image.BILINEAR))


def center_crop(img: np.ndarray, size: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    h, w = img.shape
    top, left = (h - size) // 2, (w - size) // 2
    return img[top:top + size, left:left + size], (top, left)


def eval_resize_size(size: int) -> int:
    return int(round(size * 8 / 7))


@dataclass(frozen=True)
class NormStats:
    mean: float = 0.5
    std: float = 0.25
    value_max: float = 255.0  # intensity mapped to 1.0


def dtype_max(images: Sequence[np.ndarray]) -> float:
    """255 for 8-bit content, 65535 otherwise."""
    top = max(float(np.max(i)) for i in images)
    return 255.0 if top <= 255 else 65535.0


def dataset_stats(images: Sequence[np.ndarray], value_max: Optional[float] = None) -> NormStats:
    """Mean/std of images scaled to [0, 1] by their intensity range."""
    value_max = dtype_max(images) if value_max is None else float(value_max)
    vals = np.concatenate([np.asarray(i, dtype=np.float64).ravel() / value_max for i in images])
    return NormStats(float(vals.mean()), float(max(vals.std(), 1e-6)), value_max)


def scale(img: np.ndarray, stats: NormStats) -> np.ndarray:
    """Fixed-range [0, 1] scaling, then standardization."""
    return (np.asarray(img, dtype=np.float64) / stats.value_max - stats.mean) / stats.std


@dataclass
class View:
    """A preprocessed image plus the raw pixels in the same geometry."""

    x: np.ndarray  # normalized model input (S, S)
    raw: np.ndarray  # raw intensities aligned with ``x``
    flipped: bool = False
    crop_offset: Tuple[int, int] = (0, 0)
    resized: Tuple[int, int] = (0, 0)


def preprocess(img, size: int, mode: str, stats: NormStats = NormStats(),
               rng: Optional[np.random.Generator] = None, flip_prob: float = 0.5) -> View:
    """Train: resize + random horizontal flip. Eval: resize 8/7x, centre crop."""
    img = np.asarray(img, dtype=np.float64)
    if mode == "train":
        raw = resize(img, size, size).astype(np.float64)
        flipped = rng is not None and rng.random() < flip_prob
        if flipped:
            raw = raw[:, ::-1].copy()
        x = scale(raw, stats)
        return View(x, raw, flipped, (0, 0), (size, size))
    if mode == "eval":
        big = eval_resize_size(size)
        raw_big = resize(img, big, big).astype(np.float64)
        raw, offset = center_crop(raw_big, size)
        x = scale(raw, stats)
        return View(x, raw.copy(), False, offset, (big, big))
    raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


def flip(img: np.ndarray) -> np.ndarray:
    return np.asarray(img)[:, ::-1]


def map_to_original(amap: np.ndarray, view: View, height: int, width: int) -> np.ndarray:
    """Bring a map in eval-crop coordinates back onto the original grid."""
    canvas = np.zeros(view.resized, dtype=np.float32)
    top, left = view.crop_offset
    s = amap.shape[0]
    canvas[top:top + s, left:left + s] = amap
    out = resize(canvas, height, width).astype(np.float64)
    return np.clip(out, 0.0, None)


# ------------------------------------------------------------------ I/O
def save_png(path, img: np.ndarray) -> None:
    a = np.asarray(img)
    if a.dtype == np.uint8:
        Image.fromarray(a, mode="L").save(path)
    elif a.dtype == np.uint16:
        Image.fromarray(a.astype(np.uint16)).save(path)
    else:
        raise ValueError(f"PNG output supports uint8/uint16, got {a.dtype}")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "I;16", "I;16B", "I", "P", "RGB", "RGBA"):
            raise ValueError(f"{path}: unsupported PNG mode {im.mode}")
        if im.mode in ("RGB", "RGBA", "P"):
            im = im.convert("L")
        return np.asarray(im).astype(np.float64)


def write_corpus(samples: Dict[str, List[Sample]], out_dir: str, cfg: SyntheticConfig) -> dict:
    """PNG images, one JSONL manifest per split, ground truth and priors."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    paths = {}
    for split, items in samples.items():
        mpath = os.path.join(out_dir, f"{split}.jsonl")
        with open(mpath, "w") as fh:
            for s in items:
                rel = os.path.join("images", f"{s.sample_id}.png")
                save_png(os.path.join(out_dir, rel), s.image)
                fh.write(json.dumps({"id": s.sample_id, "path": rel,
                                     "labels": [int(v) for v in s.labels],
                                     "patient_id": s.patient_id}) + "\n")
        gpath = os.path.join(out_dir, f"{split}_gt.json")
        with open(gpath, "w") as fh:
            json.dump({"classes": list(CLASS_NAMES),
                       "boxes": {s.sample_id: [b.to_json() for b in s.gt_boxes] for s in items}},
                      fh, indent=1)
        paths[split] = {"manifest": mpath, "gt": gpath}
    ppath = os.path.join(out_dir, "priors.json")
    with open(ppath, "w") as fh:
        json.dump(priors_to_json(cfg.priors()), fh, indent=1)
    paths["priors"] = ppath
    return paths


def read_manifest(path) -> List[TrainSample]:
    """Load a JSONL manifest into trainer-facing samples."""
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                img_path = row["path"]
                labels = np.array(row["labels"], dtype=np.int8)
            except (ValueError, KeyError) as e:
                raise ValueError(f"{path}:{n}: bad manifest row ({e})") from None
            full = img_path if os.path.isabs(img_path) else os.path.join(base, img_path)
            out.append(TrainSample(str(row.get("id", n)), load_png(full), labels,
                                   str(row.get("patient_id", n))))
    return out
