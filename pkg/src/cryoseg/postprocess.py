"""From probability maps to instance labels: smoothing, markers, watershed."""
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import ValidationError

__all__ = [
    "SmoothingParams",
    "PostprocessParams",
    "MarkerMap",
    "gaussian_kernel",
    "gaussian_smooth",
    "make_markers",
    "watershed_segment",
    "segment_instances",
    "compact_labels",
]

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SmoothingParams:
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")

    @property
    def radius(self):
        return int(math.ceil(3.0 * self.sigma))


@dataclass(frozen=True)
class PostprocessParams:
    sigma: float = 1.0
    fg_threshold: float = 0.5
    contour_threshold: float = 0.5
    min_instance_size: int = 10
    background_dilation: int = 2

    def __post_init__(self):
        for name in ("fg_threshold", "contour_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {v}")
        SmoothingParams(self.sigma)


@dataclass
class MarkerMap:
    """Seeds ``1..n_seeds``, sure background ``background``, unknown ``0``."""

    labels: np.ndarray
    n_seeds: int
    background: int


def gaussian_kernel(sigma):
    """Normalised 2-D Gaussian on the square ``[-ceil(3 sigma), ceil(3 sigma)]^2``."""
    params = sigma if isinstance(sigma, SmoothingParams) else SmoothingParams(sigma)
    r = params.radius
    ax = np.arange(-r, r + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    k = np.exp(-(xx**2 + yy**2) / (2.0 * params.sigma**2))
    return k / k.sum()


def gaussian_smooth(prob, params=SmoothingParams(), mode="reflect"):
    """Convolve with the truncated, renormalised Gaussian kernel.

    ``mode`` is passed to ``scipy.ndimage.convolve``; "reflect" mirrors the
    edge pixels, "wrap" gives periodic boundaries.
    """
    if not isinstance(params, SmoothingParams):
        params = SmoothingParams(params)
    prob = np.asarray(prob, dtype=np.float64)
    out = ndimage.convolve(prob, gaussian_kernel(params), mode=mode)
    return np.clip(out, 0.0, 1.0)


def _remove_small(labels, min_size):
    if min_size <= 1 or labels.max() == 0:
        return labels
    sizes = np.bincount(labels.ravel())
    small = sizes < min_size
    small[0] = False
    labels = labels.copy()
    labels[small[labels]] = 0
    return labels


def compact_labels(labels, raster_order=False):
    """Renumber non-zero labels to ``1..K``.

    By default the relative order of ids is kept. With ``raster_order`` the
    numbering follows the first pixel of each label in row-major order, the
    same convention as connected-component labelling.
    """
    labels = np.asarray(labels)
    ids, first = np.unique(labels, return_index=True)
    keep = ids != 0
    ids = ids[keep]
    if raster_order:
        ids = ids[np.argsort(first[keep], kind="stable")]
    lut = np.zeros(int(labels.max()) + 1 if labels.size else 1, dtype=np.int32)
    lut[ids] = np.arange(1, ids.size + 1, dtype=np.int32)
    return lut[labels]


def make_markers(seg_prob, contour_prob, fg_threshold=0.5, contour_threshold=0.5,
                 min_seed_size=10, background_dilation=2):
    """Seeds from confident interiors, background from far-away pixels.

    Foreground is ``seg_prob >= fg_threshold``. Seeds are 4-connected
    components of foreground pixels whose contour probability stays below
    ``contour_threshold``, dropping components under ``min_seed_size`` pixels.
    Pixels outside the foreground dilated by ``background_dilation`` pixels
    are sure background; everything else is unknown (0).
    """
    seg_prob = np.asarray(seg_prob, dtype=np.float64)
    contour_prob = np.asarray(contour_prob, dtype=np.float64)
    if seg_prob.shape != contour_prob.shape:
        raise ValidationError(f"shape mismatch: {seg_prob.shape} vs {contour_prob.shape}")
    for name, v in (("fg_threshold", fg_threshold), ("contour_threshold", contour_threshold)):
        if not 0.0 < v < 1.0:
            raise ValidationError(f"{name} must lie in (0, 1), got {v}")
    fg = seg_prob >= fg_threshold
    interior = fg & (contour_prob < contour_threshold)
    seeds, _ = ndimage.label(interior, structure=FOUR_CONNECTED)
    seeds = compact_labels(_remove_small(seeds, min_seed_size))
    n = int(seeds.max())
    background = n + 1
    if background_dilation > 0 and fg.any():
        near = ndimage.binary_dilation(fg, structure=np.ones((3, 3), bool), iterations=background_dilation)
    else:
        near = fg
    labels = seeds.astype(np.int64)
    labels[~near] = background
    return MarkerMap(labels=labels, n_seeds=n, background=background)


def watershed_segment(seg_prob, markers, smoothing=SmoothingParams(), foreground=None):
    """Priority-flood watershed on ``-smooth(seg_prob)``.

    ``smoothing=None`` uses ``seg_prob`` as already smoothed. Basins grown
    from the background label become 0. When ``foreground`` is given, the
    result is restricted to it and each instance keeps only its largest
    4-connected piece.
    """
    seg_prob = np.asarray(seg_prob, dtype=np.float64)
    if markers.labels.shape != seg_prob.shape:
        raise ValidationError(f"shape mismatch: {markers.labels.shape} vs {seg_prob.shape}")
    if markers.n_seeds == 0:
        return np.zeros(seg_prob.shape, dtype=np.int32)
    smoothed = seg_prob if smoothing is None else gaussian_smooth(seg_prob, smoothing)
    flooded = kernels.flood(
        np.ascontiguousarray(-smoothed), np.ascontiguousarray(markers.labels, dtype=np.int64)
    )
    flooded[flooded == markers.background] = 0
    if foreground is not None:
        flooded[~foreground] = 0
        flooded = _largest_pieces(flooded)
    return flooded.astype(np.int32)


def _largest_pieces(labels):
    out = labels.copy()
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        mask = labels[sl] == k
        pieces, n = ndimage.label(mask, structure=FOUR_CONNECTED)
        if n <= 1:
            continue
        keep = np.argmax(np.bincount(pieces.ravel())[1:]) + 1
        region = out[sl]
        region[mask & (pieces != keep)] = 0
    return out


def segment_instances(outputs, params=PostprocessParams()):
    """Probability maps to a compact instance label map.

    Instances are numbered in raster order of their first pixel.
    ``outputs`` needs ``seg_prob`` and ``contour_prob`` as 2-D arrays.
    """
    seg = np.asarray(outputs.seg_prob, dtype=np.float64)
    contour = np.asarray(outputs.contour_prob, dtype=np.float64)
    smoothed = gaussian_smooth(seg, SmoothingParams(params.sigma))
    markers = make_markers(
        smoothed,
        contour,
        params.fg_threshold,
        params.contour_threshold,
        params.min_instance_size,
        params.background_dilation,
    )
    labels = watershed_segment(
        smoothed, markers, smoothing=None, foreground=smoothed >= params.fg_threshold
    )
    labels = _remove_small(labels, params.min_instance_size)
    return compact_labels(labels, raster_order=True)
