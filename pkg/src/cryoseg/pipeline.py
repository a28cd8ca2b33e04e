"""Training, inference, evaluation and the organ-wise cross-validation loop."""
import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import reference
from .data import (
    AugmentConfig,
    FoldSplit,
    augment,
    crop_into_patches,
    load_dataset,
    make_folds,
    organ_of,
    read_image,
    read_labels,
    tile,
    untile,
    write_labels,
    _index_dir,
    _resize,
)
from .errors import CheckpointFormatError, TrainingDivergedError, ValidationError
from .losses import LossWeights, SEG_ST_LOSSES, total_loss
from .metrics import METRIC_NAMES, aggregate_reports, evaluate_pair
from .model import NetworkConfig, TripleUNet
from .postprocess import PostprocessParams, segment_instances
from .stain import extract_hematoxylin

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cryoseg-checkpoint"
CHECKPOINT_VERSION = 1
SCHEDULERS = ("exponential", "reduce_on_plateau", "cosine_annealing", "cosine_annealing_restarts")


# ---------------------------------------------------------------- configuration


@dataclass
class TrainConfig:
    """Flat run configuration; every unstated default is written out explicitly."""

    data_root: str = ""
    out_dir: str = "runs"
    folds_file: str = ""
    device: str = "cpu"

    batch_size: int = 10
    lr_min: float = 0.001
    lr_max: float = 0.002
    scheduler: str = "cosine_annealing"
    exp_gamma: float = 0.0  # 0: decay so that lr_min is reached at the last epoch
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    restart_period: int = 10
    epochs: int = 100
    patience: int = 20
    steps_per_epoch: int = 0  # 0: one pass over all training patches
    seed: int = 0

    lambda_rgb: float = 1.0
    lambda_h: float = 1.0
    lambda_seg_st: float = 1.0
    lambda_seg_sd: float = 1.0
    seg_st_loss: str = "bce"

    net_depth: int = 4
    net_base_channels: int = 32
    net_growth_rate: int = 32
    net_input_size: int = 256
    net_seg_raw_input: bool = False

    contour_thickness: int = 2
    hema_rescale: bool = True

    aug_p_hflip: float = 0.5
    aug_p_vflip: float = 0.5
    aug_rotate: bool = True
    aug_p_crop: float = 0.5
    aug_crop_fraction: float = 224 / 256
    aug_p_elastic: float = 0.5
    aug_elastic_alpha: float = 34.0
    aug_elastic_sigma: float = 4.0

    pp_sigma: float = 1.0
    pp_fg_threshold: float = 0.5
    pp_contour_threshold: float = 0.5
    pp_min_instance_size: int = 10
    pp_background_dilation: int = 2

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.lr_min <= self.lr_max:
            raise ValidationError(f"need 0 < lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if self.scheduler not in SCHEDULERS:
            raise ValidationError(f"unknown scheduler {self.scheduler!r}; choose from {SCHEDULERS}")
        if self.seg_st_loss not in SEG_ST_LOSSES:
            raise ValidationError(f"unknown seg_st_loss {self.seg_st_loss!r}")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        # building these validates them
        self.network, self.loss_weights, self.augmentation, self.postprocess

    @property
    def network(self):
        return NetworkConfig(
            self.net_depth, self.net_base_channels, self.net_growth_rate,
            self.net_input_size, self.net_seg_raw_input,
        )

    @property
    def loss_weights(self):
        return LossWeights(self.lambda_rgb, self.lambda_h, self.lambda_seg_st, self.lambda_seg_sd)

    @property
    def augmentation(self):
        return AugmentConfig(
            self.aug_p_hflip, self.aug_p_vflip, self.aug_rotate, self.aug_p_crop,
            self.aug_crop_fraction, self.aug_p_elastic, self.aug_elastic_alpha, self.aug_elastic_sigma,
        )

    @property
    def postprocess(self):
        return PostprocessParams(
            self.pp_sigma, self.pp_fg_threshold, self.pp_contour_threshold,
            self.pp_min_instance_size, self.pp_background_dilation,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ValidationError(f"{path}: config must be a flat key/value object")
        return cls.from_dict(d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def hash(self):
        """Digest of everything that affects results (paths and device excluded)."""
        d = {k: v for k, v in self.to_dict().items() if k not in ("out_dir", "device", "data_root")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def resolve_device(config_device="cpu"):
    """``CRYOSEG_DEVICE`` wins over the configured device."""
    name = os.environ.get("CRYOSEG_DEVICE") or config_device or "cpu"
    try:
        return torch.device(name)
    except RuntimeError as exc:
        raise ValidationError(f"unknown device {name!r}") from exc


# ---------------------------------------------------------------- learning-rate schedules


class LRSchedule:
    """Per-epoch learning rate between ``lr_min`` and ``lr_max``.

    * exponential: ``lr_max * gamma**epoch``, floored at ``lr_min * 1e-3``
    * reduce_on_plateau: starts at ``lr_max``, multiplied by ``plateau_factor``
      after ``plateau_patience`` epochs without improvement, floored at ``lr_min``
    * cosine_annealing: one half-cosine from ``lr_max`` to ``lr_min`` over all epochs
    * cosine_annealing_restarts: half-cosines of ``restart_period`` epochs,
      each restart jumps back to ``lr_max``
    """

    def __init__(self, kind, lr_min, lr_max, epochs, gamma=0.0, factor=0.5, patience=5, period=10):
        if kind not in SCHEDULERS:
            raise ValidationError(f"unknown scheduler {kind!r}")
        self.kind = kind
        self.lr_min = lr_min
        self.lr_max = lr_max
        self.epochs = max(1, epochs)
        if gamma <= 0:
            gamma = (lr_min / lr_max) ** (1.0 / max(1, self.epochs - 1)) if lr_min < lr_max else 1.0
        self.gamma = gamma
        self.factor = factor
        self.patience = patience
        self.period = max(1, period)
        self._plateau_lr = lr_max
        self._best = math.inf
        self._bad = 0

    def lr(self, epoch):
        if self.kind == "exponential":
            return max(self.lr_max * self.gamma**epoch, self.lr_min * 1e-3)
        if self.kind == "reduce_on_plateau":
            return self._plateau_lr
        if self.kind == "cosine_annealing":
            t = epoch / max(1, self.epochs - 1)
        else:
            t = (epoch % self.period) / max(1, self.period - 1)
        t = min(max(t, 0.0), 1.0)
        return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + math.cos(math.pi * t))

    def observe(self, value):
        """Feed the epoch's monitored loss (lower is better); used by plateau mode."""
        if value < self._best - 1e-12:
            self._best = value
            self._bad = 0
            return
        self._bad += 1
        if self._bad > self.patience:
            self._plateau_lr = max(self._plateau_lr * self.factor, self.lr_min)
            self._bad = 0

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.scheduler, cfg.lr_min, cfg.lr_max, cfg.epochs, cfg.exp_gamma,
                   cfg.plateau_factor, cfg.plateau_patience, cfg.restart_period)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, model, config, optimizer=None, epoch=0, extra=None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "network": model.cfg.as_dict(),
        "config": config.to_dict() if config is not None else None,
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": int(epoch),
        "seed": int(config.seed) if config is not None else 0,
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, device="cpu"):
    """Return ``(model, payload)``; the model is in eval mode."""
    try:
        payload = torch.load(Path(path), map_location=device, weights_only=True)
    except Exception as exc:
        raise CheckpointFormatError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(f"{path}: not a {CHECKPOINT_FORMAT} archive")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"{path}: checkpoint version {payload.get('version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    try:
        model = TripleUNet(NetworkConfig(**payload["network"]))
        model.load_state_dict(payload["state_dict"])
    except Exception as exc:
        raise CheckpointFormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    model.to(device).eval()
    return model, payload


# ---------------------------------------------------------------- training


@dataclass
class EpochLog:
    epoch: int
    lr: float
    total: float
    rgb: float
    h: float
    seg_st: float
    seg_sd: float
    steps: int
    val_aji: float = float("nan")
    val_pq: float = float("nan")
    val_dice: float = float("nan")


@dataclass
class RunRecord:
    fold: int
    config_hash: str
    config: dict
    train_ids: list
    holdout_ids: list
    epochs: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = float("-inf")
    wall_clock: float = 0.0
    status: str = "running"

    def to_json(self):
        d = asdict(self)
        d["epochs"] = [asdict(e) if isinstance(e, EpochLog) else e for e in self.epochs]
        return d

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, default=_json_default) + "\n")

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text())
        d["epochs"] = [EpochLog(**e) for e in d["epochs"]]
        return cls(**d)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def _seed_everything(seed):
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def to_batch(examples, device="cpu"):
    """Stack augmented examples into network tensors ``(image, hema, seg, contour)``."""
    img = np.stack([e.image for e in examples]).astype(np.float32) / 255.0
    hema = np.stack([e.hematoxylin for e in examples]).astype(np.float32)
    seg = np.stack([e.seg_target for e in examples]).astype(np.float32)
    cont = np.stack([e.contour_target for e in examples]).astype(np.float32)
    t = lambda a: torch.from_numpy(np.ascontiguousarray(a)).to(device)
    return t(img).permute(0, 3, 1, 2).contiguous(), t(hema)[:, None], t(seg)[:, None], t(cont)[:, None]


def train_step(model, optimizer, batch, weights=LossWeights(), seg_st="bce"):
    """One optimiser step; returns the loss terms as floats."""
    image, hema, seg, cont = batch
    model.train()
    outputs = model(image, hema)
    total, terms = total_loss(outputs, seg, cont, weights, seg_st)
    if not torch.isfinite(total):
        raise TrainingDivergedError(
            "non-finite loss: " + ", ".join(f"{k}={float(v.detach()):.4g}" for k, v in terms.items())
        )
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    out = {k: float(v.detach()) for k, v in terms.items()}
    out["total"] = float(total.detach())
    return out


def build_model(config, device="cpu"):
    _seed_everything(config.seed)
    return TripleUNet(config.network).to(device)


def train_fold(train_samples, holdout_samples, config, out_dir, fold=0):
    """Train one cross-validation round and persist its :class:`RunRecord`.

    The checkpoint with the best hold-out AJI is kept (mean training loss is
    the criterion when there is no hold-out set). Stops early after
    ``config.patience`` epochs without improvement.
    """
    if not train_samples:
        raise ValidationError(f"fold {fold}: training set is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    device = resolve_device(config.device)
    record = RunRecord(
        fold=fold,
        config_hash=config.hash(),
        config=config.to_dict(),
        train_ids=[s.id for s in train_samples],
        holdout_ids=[s.id for s in holdout_samples],
    )
    start = time.time()
    model = build_model(config, device)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_max)
    schedule = LRSchedule.from_config(config)
    patches = [p for s in train_samples for p in crop_into_patches(s, config.net_input_size)]
    if not config.hema_rescale:
        for p in patches:
            p.hematoxylin = extract_hematoxylin(p.image, rescale=False).astype(np.float32)
    aug_cfg = config.augmentation
    weights = config.loss_weights
    log_path = out_dir / "train_log.jsonl"
    log_path.write_text("")
    ckpt_path = out_dir / "best.pt"
    stale = 0

    for epoch in range(config.epochs):
        lr = schedule.lr(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.random.default_rng(derive_seed(config.seed, epoch)).permutation(len(patches))
        batches = [order[i:i + config.batch_size] for i in range(0, len(order), config.batch_size)]
        if config.steps_per_epoch > 0:
            batches = batches[: config.steps_per_epoch]
        sums = dict(total=0.0, rgb=0.0, h=0.0, seg_st=0.0, seg_sd=0.0)
        for step, idx in enumerate(batches):
            examples = [
                augment(patches[i], derive_seed(config.seed, epoch, step, j), aug_cfg)
                for j, i in enumerate(idx)
            ]
            try:
                terms = train_step(model, optimizer, to_batch(examples, device), weights, config.seg_st_loss)
            except TrainingDivergedError as exc:
                record.status = "diverged"
                record.wall_clock = time.time() - start
                diag = {"epoch": epoch, "step": step, "lr": lr, "error": str(exc),
                        "batch": [e.provenance for e in examples]}
                (out_dir / "diagnostics.json").write_text(json.dumps(diag, indent=2, default=_json_default))
                record.save(out_dir / "run_record.json")
                raise
            for k in sums:
                sums[k] += terms[k]
        n = max(1, len(batches))
        entry = EpochLog(epoch=epoch, lr=lr, steps=len(batches), **{k: v / n for k, v in sums.items()})
        schedule.observe(entry.total)

        if holdout_samples:
            reports = [
                evaluate_pair(s.instances, predict_instances(model, s.image, config, device), s.id, s.organ, fold)
                for s in holdout_samples
            ]
            entry.val_aji = float(np.mean([r.aji for r in reports]))
            entry.val_pq = float(np.mean([r.pq for r in reports]))
            entry.val_dice = float(np.mean([r.dice for r in reports]))
            score = entry.val_aji
        else:
            score = -entry.total
        record.epochs.append(entry)
        with log_path.open("a") as fh:
            fh.write(json.dumps({"fold": fold, "train_ids": record.train_ids, **asdict(entry)}) + "\n")
        log.info("fold %d epoch %d lr %.2e loss %.4f val_aji %.4f", fold, epoch, lr, entry.total, entry.val_aji)

        if score > record.best_score:
            record.best_score = score
            record.best_epoch = epoch
            save_checkpoint(ckpt_path, model, config, optimizer, epoch, {"fold": fold, "score": score})
            if str(ckpt_path) not in record.checkpoints:
                record.checkpoints.append(str(ckpt_path))
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                log.info("fold %d: early stop after epoch %d", fold, epoch)
                break

    record.status = "done"
    record.wall_clock = time.time() - start
    record.save(out_dir / "run_record.json")
    return record


# ---------------------------------------------------------------- inference


def stitch(prob_cells, cell_shape, grid=4):
    """Resize per-patch maps back to ``cell_shape`` and lay them out on the grid."""
    cells = [
        np.clip(_resize(np.asarray(c, dtype=np.float64), cell_shape[0], 1), 0.0, 1.0)
        if c.shape != tuple(cell_shape) else np.asarray(c, dtype=np.float64)
        for c in prob_cells
    ]
    return untile(cells, grid)


@torch.no_grad()
def predict_probabilities(model, image, config=None, device="cpu", grid=4):
    """Tile, run the network on every cell and stitch the three probability maps."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    if h != w:
        raise ValidationError(f"expected a square image, got {h}x{w}")
    size = model.cfg.input_size
    rescale = True if config is None else config.hema_rescale
    cells = tile(image, grid)
    imgs, hemas = [], []
    for c in cells:
        img = _resize(np.asarray(c, dtype=np.float32), size, 1).astype(np.float32)
        imgs.append(img)
        hemas.append(extract_hematoxylin(img, rescale=rescale).astype(np.float32))
    x = torch.from_numpy(np.stack(imgs) / 255.0).permute(0, 3, 1, 2).float().to(device)
    hm = torch.from_numpy(np.stack(hemas))[:, None].float().to(device)
    model.eval()
    out = model(x, hm)
    cell_shape = (h // grid, w // grid)
    maps = {}
    for name in ("rgb_prob", "contour_prob", "seg_prob"):
        arr = getattr(out, name)[:, 0].cpu().numpy()
        maps[name] = stitch(list(arr), cell_shape, grid)
    return maps


@dataclass
class _Maps:
    seg_prob: np.ndarray
    contour_prob: np.ndarray
    rgb_prob: np.ndarray = None


def predict_instances(model, image, config=None, device="cpu"):
    maps = predict_probabilities(model, image, config, device)
    params = config.postprocess if config is not None else PostprocessParams()
    return segment_instances(_Maps(**maps), params)


def infer(checkpoint, images, device=None):
    """Instance maps for a list of RGB images using a saved checkpoint."""
    device = resolve_device(device or "cpu")
    model, payload = load_checkpoint(checkpoint, device)
    config = TrainConfig.from_dict(payload["config"]) if payload.get("config") else None
    return [predict_instances(model, img, config, device) for img in images]


def infer_dir(checkpoint, image_dir, out_dir, device=None):
    image_dir, out_dir = Path(image_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _index_dir(image_dir)
    if not files:
        raise ValidationError(f"no images found in {image_dir}")
    labels = infer(checkpoint, [read_image(p) for p in files.values()], device)
    written = []
    for stem, lab in zip(files, labels):
        path = out_dir / f"{stem}.png"
        write_labels(path, lab)
        written.append(path)
    return written


# ---------------------------------------------------------------- evaluation

REPORT_FIELDS = ("kind", "id", "organ", "fold") + METRIC_NAMES + ("tp", "fp", "fn")


def evaluate(predictions, ground_truth, folds=None):
    """Score id-aligned prediction/ground-truth label maps.

    ``predictions`` and ``ground_truth`` map sample id to label map. Returns
    ``(reports, aggregates)``.
    """
    if not predictions:
        raise ValidationError("no predictions to evaluate")
    missing = sorted(set(predictions) ^ set(ground_truth))
    if missing:
        raise ValidationError(f"prediction and ground-truth ids differ: {missing}")
    reports = []
    for sid in sorted(predictions):
        fold = folds.fold_of(sid) if folds is not None else -1
        reports.append(evaluate_pair(ground_truth[sid], predictions[sid], sid, organ_of(sid), fold))
    return reports, aggregate_reports(reports)


def report_rows(reports, aggregates):
    rows = [dict(kind="image", **r.as_dict()) for r in reports]
    for organ, m in aggregates["per_organ"].items():
        rows.append(dict(kind="organ", id="", organ=organ, fold="", **m))
    for fold, m in aggregates["per_fold"].items():
        rows.append(dict(kind="fold", id="", organ="", fold=fold, **m))
    rows.append(dict(kind="overall", id="", organ="", fold="", **aggregates["overall"]))
    rows.append(dict(kind="reference", id="baseline_unet", organ="", fold="",
                     aji=round(reference.BASELINE_AJI / 100, 6), pq=round(reference.BASELINE_PQ / 100, 6)))
    rows.append(dict(kind="reference", id="triple_unet_reported", organ="", fold="",
                     aji=round(reference.TRIPLE_UNET_AJI / 100, 6), pq=round(reference.TRIPLE_UNET_PQ / 100, 6)))
    return rows


def write_report(path, reports, aggregates):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, restval="")
        writer.writeheader()
        for row in report_rows(reports, aggregates):
            writer.writerow({k: row.get(k, "") for k in REPORT_FIELDS})
    return path


def read_report(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def evaluate_dirs(pred_dir, gt_dir, out_path, folds_file=None):
    gt_dir = Path(gt_dir)
    if (gt_dir / "masks").is_dir():
        gt_dir = gt_dir / "masks"
    preds = {k: read_labels(p) for k, p in _index_dir(pred_dir).items()}
    gts = {k: read_labels(p) for k, p in _index_dir(gt_dir).items()}
    if not preds:
        raise ValidationError(f"no predictions found in {pred_dir}")
    gts = {k: v for k, v in gts.items() if k in preds} if set(preds) <= set(gts) else gts
    folds = FoldSplit.load(folds_file) if folds_file else None
    reports, agg = evaluate(preds, gts, folds)
    write_report(out_path, reports, agg)
    return reports, agg


# ---------------------------------------------------------------- tables


def _pct(v):
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{100 * v:.2f}"


def _num(v):
    return "-" if v is None else f"{v:.4f}"


def fold_table(aggregates, metric, n_folds):
    """Per-fold comparison: ``Fold | Baseline | Our Model`` plus an average row."""
    baseline = {"aji": reference.BASELINE_AJI_BY_FOLD, "pq": reference.BASELINE_PQ_BY_FOLD}[metric]
    use_ref = n_folds == len(baseline)
    lines = [f"| {metric.upper()} Score | | |", "|---|---|---|", "| Fold | Baseline | Our Model |"]
    for k in range(n_folds):
        ours = aggregates["per_fold"].get(k, {}).get(metric)
        lines.append(f"| {k} | {_num(baseline[k]) if use_ref else '-'} | {_num(ours)} |")
    avg = reference.BASELINE_AJI if metric == "aji" else reference.BASELINE_PQ
    lines.append(f"| AVERAGE | {avg / 100:.3f} | {_num(aggregates['overall'][metric])} |")
    return "\n".join(lines)


def organ_table(aggregates):
    lines = [
        "| Organ | AJI Baseline (%) | AJI Our Model (%) | PQ Baseline (%) | PQ Our Model (%) |",
        "|---|---|---|---|---|",
    ]
    for organ, m in aggregates["per_organ"].items():
        b_aji = reference.lookup_organ(reference.BASELINE_AJI_BY_ORGAN, organ)
        b_pq = reference.lookup_organ(reference.BASELINE_PQ_BY_ORGAN, organ)
        lines.append(
            f"| {organ} | {b_aji if b_aji is not None else '-'} | {_pct(m['aji'])} | "
            f"{b_pq if b_pq is not None else '-'} | {_pct(m['pq'])} |"
        )
    o = aggregates["overall"]
    lines.append(
        f"| Average | {reference.BASELINE_AJI} | {_pct(o['aji'])} | {reference.BASELINE_PQ} | {_pct(o['pq'])} |"
    )
    return "\n".join(lines)


def summary_table(aggregates):
    o = aggregates["overall"]
    return "\n".join([
        "| Model | AJI Score | PQ Score |",
        "|---|---|---|",
        f"| U-Net (published baseline) | {reference.BASELINE_AJI} | {reference.BASELINE_PQ} |",
        f"| Triple U-Net (published) | {reference.TRIPLE_UNET_AJI} | {reference.TRIPLE_UNET_PQ} |",
        f"| Triple U-Net (this run) | {_pct(o['aji'])} | {_pct(o['pq'])} |",
    ])


def render_tables(aggregates, n_folds):
    return "\n\n".join([
        "## Summary", summary_table(aggregates),
        "## Per organ", organ_table(aggregates),
        "## Per fold: AJI", fold_table(aggregates, "aji", n_folds),
        "## Per fold: PQ", fold_table(aggregates, "pq", n_folds),
    ]) + "\n"


# ---------------------------------------------------------------- cross-validation


def _index_samples(samples):
    return {s.id: s for s in samples}


def run_fold(samples, folds, k, config, out_dir):
    """Train, predict and score fold ``k``; skipped when a matching result exists."""
    fold_dir = Path(out_dir) / f"fold_{k}"
    result_path = fold_dir / "result.json"
    if result_path.exists():
        done = json.loads(result_path.read_text())
        if done.get("config_hash") == config.hash():
            log.info("fold %d already complete, skipping", k)
            return done
    by_id = _index_samples(samples)
    train = [by_id[i] for i in folds.train_ids(k)]
    hold = [by_id[i] for i in folds.holdout(k)]
    record = train_fold(train, hold, config, fold_dir, fold=k)
    model, _ = load_checkpoint(record.checkpoints[-1], resolve_device(config.device))
    pred_dir = fold_dir / "predictions"
    pred_dir.mkdir(exist_ok=True)
    preds = {}
    for s in hold:
        preds[s.id] = predict_instances(model, s.image, config, resolve_device(config.device))
        write_labels(pred_dir / f"{s.id}.png", preds[s.id])
    reports, _ = evaluate(preds, {s.id: s.instances for s in hold}, folds)
    result = {
        "fold": k,
        "config_hash": config.hash(),
        "organ": folds.organs[k],
        "reports": [r.as_dict() for r in reports],
        "best_epoch": record.best_epoch,
    }
    result_path.write_text(json.dumps(result, indent=2, default=_json_default) + "\n")
    return result


def crossval(config, dataset_root=None):
    """Organ-wise leave-one-out over all folds; writes report.csv and tables.md."""
    from .metrics import MetricReport

    root = dataset_root or config.data_root
    if not root:
        raise ValidationError("no dataset root given")
    samples = load_dataset(root, config.contour_thickness)
    folds = FoldSplit.load(config.folds_file) if config.folds_file else make_folds(samples)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config.json")
    folds.save(out_dir / "folds.json")
    reports = []
    for k in range(len(folds)):
        result = run_fold(samples, folds, k, config, out_dir)
        reports.extend(MetricReport(**r) for r in result["reports"])
    agg = aggregate_reports(reports)
    write_report(out_dir / "report.csv", reports, agg)
    tables = render_tables(agg, len(folds))
    (out_dir / "tables.md").write_text(tables)
    return {"reports": reports, "aggregates": agg, "tables": tables, "folds": folds}
