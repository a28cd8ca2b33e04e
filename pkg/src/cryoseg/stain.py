"""Beer-Lambert colour deconvolution for H&E patches.

Intensities are converted to base-10 optical density and unmixed against a
fixed stain matrix. Only the hematoxylin channel is used downstream.
"""
import numpy as np

from .errors import ValidationError

__all__ = [
    "RUIFROK_HE",
    "make_stain_matrix",
    "rgb_to_optical_density",
    "deconvolve_stains",
    "extract_hematoxylin",
]


def make_stain_matrix(hematoxylin=(0.65, 0.70, 0.29), eosin=(0.07, 0.99, 0.11)):
    """Build a 3x3 stain matrix with unit rows (H, E, residual).

    The residual row is the normalised cross product of the first two.
    """
    h = np.asarray(hematoxylin, dtype=np.float64)
    e = np.asarray(eosin, dtype=np.float64)
    h = h / np.linalg.norm(h)
    e = e / np.linalg.norm(e)
    r = np.cross(h, e)
    norm = np.linalg.norm(r)
    if norm < 1e-12:
        raise ValidationError("hematoxylin and eosin vectors are collinear")
    return np.stack([h, e, r / norm])


RUIFROK_HE = make_stain_matrix()


def rgb_to_optical_density(patch, background_intensity=255.0):
    """Per-channel optical density ``-log10(max(I, 1) / I0)``.

    Intensities below one unit are floored to 1 so the result stays finite.
    """
    if background_intensity <= 0:
        raise ValidationError(f"background_intensity must be > 0, got {background_intensity}")
    patch = np.asarray(patch, dtype=np.float64)
    return np.log10(background_intensity / np.maximum(patch, 1.0))


def _check_stains(stains):
    stains = np.asarray(stains, dtype=np.float64)
    if stains.shape != (3, 3):
        raise ValidationError(f"stain matrix must be 3x3, got {stains.shape}")
    if not np.all(np.isfinite(stains)):
        raise ValidationError("stain matrix has non-finite entries")
    cond = np.linalg.cond(stains)
    if not np.isfinite(cond) or cond > 1e12:
        raise ValidationError("stain matrix is singular")
    return stains


def deconvolve_stains(od, stains=RUIFROK_HE, clamp=True):
    """Unmix an optical-density image into three concentration maps.

    Solves ``od = stains.T @ c`` per pixel via the pseudo-inverse. Returns an
    ``(3, H, W)`` array ordered like the stain rows; negative concentrations
    are set to zero unless ``clamp`` is false.
    """
    stains = _check_stains(stains)
    od = np.asarray(od, dtype=np.float64)
    if od.shape[-1] != 3:
        raise ValidationError(f"optical density must have 3 channels, got shape {od.shape}")
    unmix = np.linalg.pinv(stains.T)
    conc = np.einsum("sc,...c->s...", unmix, od)
    if clamp:
        conc = np.maximum(conc, 0.0)
    return conc


def extract_hematoxylin(patch, stains=RUIFROK_HE, background_intensity=255.0, rescale=True):
    """Hematoxylin concentration of an RGB patch, min-max scaled to [0, 1].

    Constant maps (e.g. a blank or uniformly coloured patch) come back as zeros.
    With ``rescale=False`` the clamped raw concentration is returned.
    """
    patch = np.asarray(patch)
    if patch.ndim != 3 or patch.shape[-1] != 3:
        raise ValidationError(f"expected an HxWx3 patch, got shape {patch.shape}")
    od = rgb_to_optical_density(patch, background_intensity)
    hema = deconvolve_stains(od, stains)[0]
    if not rescale:
        return hema
    lo, hi = hema.min(), hema.max()
    if hi - lo <= 1e-12:
        return np.zeros_like(hema)
    return (hema - lo) / (hi - lo)


def render_stains(concentrations, stains=RUIFROK_HE, background_intensity=255.0):
    """Inverse of deconvolution: concentrations ``(3, H, W)`` to an RGB float image."""
    stains = np.asarray(stains, dtype=np.float64)
    conc = np.asarray(concentrations, dtype=np.float64)
    od = np.einsum("sc,s...->...c", stains, conc)
    return background_intensity * np.power(10.0, -od)
