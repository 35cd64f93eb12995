"""Training loop, run configuration, checkpointing, evaluation, and
single-image prediction."""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import eval_metrics, objective, pano_data
from .encoder import EncoderConfig
from .ensemble_decoder import EB, BiCompressNet
from .pano_data import IGNORE, MaskSpec

CHECKPOINT_VERSION = 1

# resolution -> (batch_size, base_lr, max_iter)
PRESETS = {
    (64, 128): (16, 1e-3, 300),
    (256, 512): (8, 1e-3, 300),
    (512, 1024): (4, 1e-4, 60),
}

# Fixed rendering palette, one distinct RGB color per class id 0..12.
PALETTE = np.array([
    [158, 218, 229], [219, 219, 141], [140, 86, 75], [196, 156, 148],
    [247, 182, 210], [227, 119, 194], [148, 103, 189], [255, 152, 150],
    [214, 39, 40], [197, 176, 213], [44, 160, 44], [255, 187, 120],
    [31, 119, 180],
], dtype=np.uint8)


class CheckpointError(RuntimeError):
    pass


@dataclass
class RunConfig:
    resolution: tuple = (64, 128)
    modality: str = "RGB"
    batch_size: int = None
    base_lr: float = None
    max_iter: int = None
    fold_id: int = 1
    seed: int = 0
    n_classes: int = 13
    c_fpn: int = 64
    c_bottleneck: int = None
    mask_enabled: bool = True
    alpha: float = 0.7
    beta: float = 0.3
    gamma: float = 0.003
    data_root: str = None
    n_synth: int = 8
    val_interval: int = 10
    deterministic: bool = False
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.resolution = tuple(self.resolution)
        h, w = self.resolution
        if h % 32 != 0 or w != 2 * h:
            raise ValueError(f"resolution must have H % 32 == 0 and W == 2H, got ({h},{w})")
        preset = PRESETS.get(self.resolution)
        if self.batch_size is None:
            if preset is None:
                raise ValueError("batch_size required for non-preset resolutions")
            self.batch_size = preset[0]
        if self.base_lr is None:
            self.base_lr = preset[1] if preset else 1e-3
        if self.max_iter is None:
            self.max_iter = preset[2] if preset else 300

    @classmethod
    def from_json(cls, path, **overrides):
        """Load a flat-JSON config file; keyword overrides win."""
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def as_dict(self):
        return dataclasses.asdict(self)


def build_model(config):
    in_ch = 4 if config.modality == "RGB-D" else 3
    enc = EncoderConfig(c_fpn=config.c_fpn, input_channels=in_ch)
    return BiCompressNet(enc, config.resolution, n_classes=config.n_classes,
                         c_bottleneck=config.c_bottleneck)


def resolve_dataset(config):
    """Train/test corpora: disk data split by fold, or a synthetic corpus
    (used whole for training, no held-out areas)."""
    root = config.data_root or os.environ.get("BICOMPRESS_DATA_ROOT")
    if root:
        samples = pano_data.load_dataset(root, config.resolution, config.modality)
        split = pano_data.make_fold_split(config.fold_id)
        train = [s for s in samples if s.area_id in split.train_areas]
        test = [s for s in samples if s.area_id in split.test_areas]
        return train, test
    samples = pano_data.synth_panorama(config.n_synth, config.resolution,
                                       config.n_classes, config.seed)
    return samples, []


def _sample_seed(corpus_seed, epoch, index):
    # stable per-sample augmentation seed, independent of iteration order
    entropy = [abs(int(corpus_seed)), int(epoch), int(index) + 1]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _batches(n, batch_size, rng):
    # trailing partial batches are dropped: batch norm cannot train on a
    # single sample when sequence features are 1x1
    order = rng.permutation(n)
    for start in range(0, n - batch_size + 1, batch_size):
        yield order[start:start + batch_size]


def save_checkpoint(path, model, optimizer, iteration, config, history):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer else None,
        "iteration": iteration,
        "config": config.as_dict(),
        "history": history,
    }, path)
    return path


def load_checkpoint(path):
    try:
        state = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"corrupt or unreadable checkpoint {path}: {exc}") from exc
    version = state.get("format_version") if isinstance(state, dict) else None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} != supported {CHECKPOINT_VERSION}")
    return state


def restore_model(state, config=None):
    cfg = RunConfig(**state["config"])
    if config is not None and tuple(config.resolution) != cfg.resolution:
        raise CheckpointError(
            f"checkpoint resolution {cfg.resolution} != configured {tuple(config.resolution)}")
    model = build_model(cfg)
    model.load_state_dict(state["model_state"])
    model.eval()
    return model, cfg


def train(config, train_samples=None, eval_samples=None, log=print):
    """Run the full training loop; returns (model, history, checkpoint path)."""
    if config.deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(config.seed)

    if train_samples is None:
        train_samples, eval_samples = resolve_dataset(config)
    if config.batch_size > len(train_samples):
        raise ValueError(f"batch_size {config.batch_size} exceeds corpus size {len(train_samples)}")

    weights = objective.class_weights([s.labels.numpy() for s in train_samples],
                                      config.n_classes)
    obj = objective.ObjectiveConfig(alpha=config.alpha, beta=config.beta,
                                    gamma=config.gamma, class_weights=weights.float())
    sched = objective.ScheduleConfig(base_lr=config.base_lr, max_iter=config.max_iter)
    mask = MaskSpec(enabled=config.mask_enabled)

    model = build_model(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.base_lr)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history = []

    for epoch in range(config.max_iter):
        lr = objective.poly_lr(sched, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        rng = np.random.default_rng(_sample_seed(config.seed, epoch, -1 + 2 ** 20))
        model.train()
        epoch_losses = []
        for batch_idx in _batches(len(train_samples), config.batch_size, rng):
            images = []
            labels = []
            for i in batch_idx:
                s = pano_data.apply_black_mask(train_samples[i], mask,
                                               _sample_seed(config.seed, epoch, int(i)))
                images.append(s.image)
                labels.append(s.labels)
            images = torch.stack(images)
            labels = torch.stack(labels)
            outputs = model.forward_full(images, train_mode=True)
            report = objective.total_loss(outputs, labels, obj)
            if not torch.isfinite(report.total):
                save_checkpoint(out_dir / "diagnostic.ckpt", model, optimizer,
                                epoch, config, history)
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}: {report.as_dict()}")
            optimizer.zero_grad()
            report.total.backward()
            optimizer.step()
            epoch_losses.append(report.as_dict())

        record = {"epoch": epoch, "lr": lr}
        for key in epoch_losses[0]:
            record[key] = float(np.mean([e[key] for e in epoch_losses]))
        if config.val_interval and (epoch + 1) % config.val_interval == 0:
            corpus = eval_samples or train_samples
            miou, macc, _ = evaluate_samples(model, corpus, config)
            record.update(val_miou=miou, val_macc=macc)
            log(f"epoch {epoch + 1}/{config.max_iter} loss {record['total']:.4f} "
                f"mIoU {miou:.4f} mAcc {macc:.4f}")
        history.append(record)

    ckpt = save_checkpoint(out_dir / "model.ckpt", model, optimizer,
                           config.max_iter, config, history)
    return model, history, ckpt


@torch.no_grad()
def evaluate_samples(model, samples, config, batch_size=8):
    """Eval-mode (teacher-only) forward over samples; returns metrics."""
    model.eval()
    cm = eval_metrics.ConfusionMatrix(config.n_classes)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images = torch.stack([s.image for s in chunk])
        outputs = model.forward_full(images, train_mode=False)
        pred = outputs[EB].logits.argmax(dim=1).numpy()
        labels = np.stack([s.labels.numpy() for s in chunk])
        cm.accumulate(pred, labels)
    miou, macc, per_class = eval_metrics.miou_macc(cm)
    return miou, macc, cm


def pixel_accuracy(model, samples, config, batch_size=8):
    _, _, cm = evaluate_samples(model, samples, config, batch_size)
    return float(np.diag(cm.counts).sum() / cm.counts.sum())


def render_labels(labels):
    """Map a class-index raster to the fixed RGB palette (IGNORE -> black)."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    valid = labels != IGNORE
    out[valid] = PALETTE[labels[valid]]
    return out


@torch.no_grad()
def predict(checkpoint_path, image_path, out_dir):
    """Segment one ERP image, writing the raw label raster, a color-mapped
    rendering, and an input/prediction panel."""
    state = load_checkpoint(checkpoint_path)
    model, cfg = restore_model(state)
    h, w = cfg.resolution
    img = Image.open(image_path).convert("RGB")
    if img.width != 2 * img.height:
        raise ValueError(f"input must be ERP with W = 2H, got {img.width}x{img.height}")
    img = img.resize((w, h), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
    if cfg.modality == "RGB-D":
        arr = np.concatenate([arr, np.zeros((1, h, w), dtype=np.float32)])
    logits = model.forward_full(torch.from_numpy(arr).unsqueeze(0),
                                train_mode=False)[EB].logits
    labels = logits.argmax(dim=1)[0].numpy().astype(np.uint8)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(image_path).stem
    Image.fromarray(labels).save(out_dir / f"{stem}_labels.png")
    render = render_labels(labels)
    Image.fromarray(render).save(out_dir / f"{stem}_seg.png")
    panel = np.concatenate([np.asarray(img, dtype=np.uint8), render], axis=1)
    Image.fromarray(panel).save(out_dir / f"{stem}_panel.png")
    return labels
