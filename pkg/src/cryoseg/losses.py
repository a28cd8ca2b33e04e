"""Branch losses and their weighted total.

All functions take torch tensors of probabilities (any shape, optionally with
a leading batch dimension) and binary targets, and return scalar tensors so
they can be back-propagated.
"""
from dataclasses import astuple, dataclass

import torch

from .errors import ValidationError

__all__ = [
    "EPS",
    "DICE_SMOOTH",
    "LossWeights",
    "bce_loss",
    "soft_dice_loss",
    "total_loss",
    "SEG_ST_LOSSES",
]

EPS = 1e-7
DICE_SMOOTH = 1e-6


@dataclass(frozen=True)
class LossWeights:
    rgb: float = 1.0
    h: float = 1.0
    seg_st: float = 1.0
    seg_sd: float = 1.0

    def __post_init__(self):
        values = astuple(self)
        if any(v < 0 for v in values):
            raise ValidationError(f"loss weights must be non-negative, got {values}")
        if not any(v > 0 for v in values):
            raise ValidationError("at least one loss weight must be positive")


def _check(x, y):
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch: prediction {tuple(x.shape)} vs target {tuple(y.shape)}")


def _flatten(t, per_example):
    return t.reshape(t.shape[0], -1) if per_example else t.reshape(1, -1)


def bce_loss(x, y, per_example=False):
    """Mean binary cross-entropy (natural log) with x clipped to [EPS, 1-EPS].

    With ``per_example`` the mean is taken per leading index and then averaged
    over the batch; for equal-sized examples the two are identical.
    """
    _check(x, y)
    x = _flatten(x, per_example).clamp(EPS, 1.0 - EPS)
    y = _flatten(y, per_example).to(x.dtype)
    per = -(y * torch.log(x) + (1.0 - y) * torch.log1p(-x)).mean(dim=1)
    return per.mean()


def soft_dice_loss(x, y, per_example=False, smooth=DICE_SMOOTH):
    """``1 - (2 sum(xy) + s) / (sum(x^2) + sum(y^2) + s)``.

    ``s`` appears in numerator and denominator so that empty-vs-empty gives 0.
    """
    _check(x, y)
    x = _flatten(x, per_example)
    y = _flatten(y, per_example).to(x.dtype)
    num = 2.0 * (x * y).sum(dim=1) + smooth
    den = (x * x).sum(dim=1) + (y * y).sum(dim=1) + smooth
    return (1.0 - num / den).mean()


SEG_ST_LOSSES = {"bce": bce_loss, "dice": soft_dice_loss}


def total_loss(outputs, seg_target, contour_target, weights=LossWeights(), seg_st="bce"):
    """Weighted sum of the four branch terms.

    ``outputs`` is any object with ``rgb_prob``, ``contour_prob`` and
    ``seg_prob`` attributes. ``seg_st`` names an entry of ``SEG_ST_LOSSES`` or
    is a callable ``(x, y) -> scalar``. Returns ``(total, terms)``.
    """
    seg_st_fn = SEG_ST_LOSSES[seg_st] if isinstance(seg_st, str) else seg_st
    for name in ("rgb_prob", "contour_prob", "seg_prob"):
        _check(getattr(outputs, name), seg_target if name != "contour_prob" else contour_target)
    terms = {
        "rgb": bce_loss(outputs.rgb_prob, seg_target),
        "h": soft_dice_loss(outputs.contour_prob, contour_target),
        "seg_st": seg_st_fn(outputs.seg_prob, seg_target),
        "seg_sd": soft_dice_loss(outputs.seg_prob, seg_target),
    }
    total = (
        weights.rgb * terms["rgb"]
        + weights.h * terms["h"]
        + weights.seg_st * terms["seg_st"]
        + weights.seg_sd * terms["seg_sd"]
    )
    return total, terms
