"""Panorama dataset handling: disk loading, fold splits, black-mask
augmentation, and a synthetic indoor-scene generator for desk-scale runs.

Disk layout:
    <root>/class_table.json                     # {"names": [...], "ignore_value": int}
    <root>/area_<k>/rgb/<id>.png                # 8-bit RGB
    <root>/area_<k>/depth/<id>.png              # 16-bit, millimeters, 0 = invalid
    <root>/area_<k>/semantic/<id>.png           # 8-bit class-index raster
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IGNORE = 255
N_CLASSES_DEFAULT = 13

# Test areas per fold; train areas are the complement of {1..6}.
FOLD_TABLE = {1: {5}, 2: {2, 4}, 3: {1, 3, 6}}

# Hole sizes {20x40, 80x160, 160x320} at the 512x1024 reference resolution,
# stored as (height, width) fractions so they scale to any input size.
DEFAULT_HOLE_FRACTIONS = [
    (20 / 512, 40 / 1024),
    (80 / 512, 160 / 1024),
    (160 / 512, 320 / 1024),
]

DEPTH_MAX_METERS = 10.0


class DatasetError(RuntimeError):
    pass


@dataclass
class PanoramaSample:
    image: torch.Tensor        # C x H x W, float32 in [0,1]
    labels: torch.Tensor       # H x W, int64, class ids or IGNORE
    area_id: int
    sample_id: str

    def __post_init__(self):
        if self.image.shape[-1] != 2 * self.image.shape[-2]:
            raise DatasetError(f"{self.sample_id}: W must equal 2H, got {tuple(self.image.shape)}")
        if self.labels.shape != self.image.shape[-2:]:
            raise DatasetError(f"{self.sample_id}: labels/image shape mismatch")


@dataclass
class FoldSplit:
    fold_id: int
    train_areas: set
    test_areas: set


@dataclass
class MaskSpec:
    hole_fractions: list = field(default_factory=lambda: list(DEFAULT_HOLE_FRACTIONS))
    enabled: bool = True

    def __post_init__(self):
        for hf, wf in self.hole_fractions:
            if not (0 < hf <= 1 and 0 < wf <= 1):
                raise ValueError(f"hole fractions must lie in (0,1], got ({hf},{wf})")


def make_fold_split(fold_id):
    if fold_id not in FOLD_TABLE:
        raise ValueError(f"fold_id must be in {{1,2,3}}, got {fold_id}")
    test = set(FOLD_TABLE[fold_id])
    return FoldSplit(fold_id, set(range(1, 7)) - test, test)


def _check_resolution(resolution):
    h, w = resolution
    if w != 2 * h:
        raise DatasetError(f"W must equal 2H, got ({h},{w})")
    return h, w


def load_dataset(root_path, resolution, modality="RGB-D"):
    """Load every panorama under root_path, resized to (H, W).

    Images are resized bilinearly, labels with nearest-neighbor. The raster
    value given as ignore_value in the class table maps to IGNORE; any other
    value outside the class range is a hard error.
    """
    h, w = _check_resolution(resolution)
    if modality not in ("RGB", "RGB-D"):
        raise DatasetError(f"unknown modality {modality!r}")
    root = Path(root_path)
    table_path = root / "class_table.json"
    if not table_path.exists():
        raise DatasetError(f"missing class table {table_path}")
    table = json.loads(table_path.read_text())
    n_classes = len(table["names"])
    ignore_value = int(table.get("ignore_value", IGNORE))

    samples = []
    for area_dir in sorted(root.glob("area_*")):
        area_id = int(area_dir.name.split("_")[1])
        for rgb_path in sorted((area_dir / "rgb").glob("*.png")):
            sample_id = f"{area_dir.name}/{rgb_path.stem}"
            sem_path = area_dir / "semantic" / rgb_path.name
            if not sem_path.exists():
                raise DatasetError(f"missing label file for sample {sample_id}")

            rgb = Image.open(rgb_path).convert("RGB").resize((w, h), Image.BILINEAR)
            image = np.asarray(rgb, dtype=np.float32).transpose(2, 0, 1) / 255.0

            if modality == "RGB-D":
                depth_path = area_dir / "depth" / rgb_path.name
                if not depth_path.exists():
                    raise DatasetError(f"missing depth file for sample {sample_id}")
                depth = Image.open(depth_path).resize((w, h), Image.BILINEAR)
                depth = np.asarray(depth, dtype=np.float32) / 1000.0  # mm -> m
                depth = np.clip(depth, 0.0, DEPTH_MAX_METERS) / DEPTH_MAX_METERS
                image = np.concatenate([image, depth[None]], axis=0)

            raw = np.asarray(Image.open(sem_path).resize((w, h), Image.NEAREST))
            labels = raw.astype(np.int64)
            labels[raw == ignore_value] = IGNORE
            bad = set(np.unique(labels)) - set(range(n_classes)) - {IGNORE}
            if bad:
                raise DatasetError(f"unknown class ids {sorted(bad)} in labels of {sample_id}")

            samples.append(PanoramaSample(torch.from_numpy(image),
                                          torch.from_numpy(labels), area_id, sample_id))
    return samples


def apply_black_mask(sample, spec, rng_seed):
    """Zero out one randomly placed hole; labels are untouched."""
    if not spec.enabled:
        return sample
    _, h, w = sample.image.shape
    rng = np.random.default_rng(rng_seed)
    hf, wf = spec.hole_fractions[rng.integers(len(spec.hole_fractions))]
    hh = max(1, int(round(hf * h)))
    hw = max(1, int(round(wf * w)))
    top = int(rng.integers(0, h - hh + 1))
    left = int(rng.integers(0, w - hw + 1))
    image = sample.image.clone()
    image[:, top:top + hh, left:left + hw] = 0.0
    return PanoramaSample(image, sample.labels, sample.area_id, sample.sample_id)


# Base colors per class for the synthetic generator (RGB in [0,1]).
_SYNTH_COLORS = np.array([
    [0.9, 0.9, 0.9], [0.6, 0.5, 0.4], [0.4, 0.3, 0.2], [0.8, 0.2, 0.2],
    [0.2, 0.8, 0.2], [0.2, 0.2, 0.8], [0.8, 0.8, 0.2], [0.8, 0.2, 0.8],
    [0.2, 0.8, 0.8], [0.5, 0.2, 0.7], [0.7, 0.5, 0.1], [0.1, 0.5, 0.7],
    [0.3, 0.7, 0.4],
], dtype=np.float32)


def synth_panorama(n_samples, resolution, n_classes, rng_seed):
    """Generate indoor-like ERP scenes: ceiling/wall/floor bands plus
    rectangles of object classes, with class-keyed colors and seeded noise.

    Classes 0/1/2 are ceiling/wall/floor and appear in every sample;
    object classes 3..n_classes-1 are cycled over samples so the corpus
    covers all of them. The top and bottom two rows are IGNORE (pole void).
    """
    if n_classes > N_CLASSES_DEFAULT:
        raise ValueError(f"n_classes must be <= {N_CLASSES_DEFAULT}")
    if n_classes < 3:
        raise ValueError("need at least the 3 band classes")
    h, w = _check_resolution(resolution)
    rng = np.random.default_rng(rng_seed)
    object_classes = list(range(3, n_classes))
    samples = []
    next_obj = 0
    for idx in range(n_samples):
        labels = np.full((h, w), 1, dtype=np.int64)  # wall
        ceil_end = int(h * rng.uniform(0.2, 0.35))
        floor_start = int(h * rng.uniform(0.65, 0.8))
        labels[:ceil_end] = 0
        labels[floor_start:] = 2
        n_rects = 3 if object_classes else 0
        for _ in range(n_rects):
            cls = object_classes[next_obj % len(object_classes)]
            next_obj += 1
            rh = int(rng.integers(h // 8, h // 3 + 1))
            rw = int(rng.integers(w // 8, w // 3 + 1))
            top = int(rng.integers(2, h - rh - 2))
            left = int(rng.integers(0, w - rw))
            labels[top:top + rh, left:left + rw] = cls
        labels[:2] = IGNORE
        labels[-2:] = IGNORE

        safe = np.where(labels == IGNORE, 0, labels)
        image = _SYNTH_COLORS[safe].transpose(2, 0, 1).copy()
        image += rng.normal(0.0, 0.03, size=image.shape).astype(np.float32)
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
        image[:, labels == IGNORE] = 0.0

        samples.append(PanoramaSample(torch.from_numpy(image), torch.from_numpy(labels),
                                      area_id=1 + idx % 6, sample_id=f"synth_{idx:04d}"))
    return samples


def write_dataset(samples, root_path, class_names=None, ignore_value=IGNORE):
    """Write samples to disk in the documented layout (fixture helper)."""
    root = Path(root_path)
    names = class_names or [f"class_{i}" for i in range(N_CLASSES_DEFAULT)]
    root.mkdir(parents=True, exist_ok=True)
    (root / "class_table.json").write_text(
        json.dumps({"names": names, "ignore_value": ignore_value}, indent=2))
    for s in samples:
        area = root / f"area_{s.area_id}"
        for sub in ("rgb", "depth", "semantic"):
            (area / sub).mkdir(parents=True, exist_ok=True)
        name = s.sample_id.split("/")[-1] + ".png"
        rgb = (s.image[:3].numpy().transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
        Image.fromarray(rgb).save(area / "rgb" / name)
        if s.image.shape[0] == 4:
            depth = (s.image[3].numpy() * DEPTH_MAX_METERS * 1000.0).round().astype(np.uint16)
        else:
            depth = np.full(s.labels.shape, 2000, dtype=np.uint16)
        Image.fromarray(depth).save(area / "depth" / name)
        sem = s.labels.numpy()
        sem = np.where(sem == IGNORE, ignore_value, sem).astype(np.uint8)
        Image.fromarray(sem).save(area / "semantic" / name)
