"""Dataset loading, contour targets, patching, augmentation and folds.

Dataset layout::

    root/images/<organ>_<rest>.png|.tif   RGB, 8 bit
    root/masks/<organ>_<rest>.png|.tif    instance labels, 16 bit

The organ is the filename prefix before the first underscore.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage import io as skio
from skimage.transform import resize

from . import kernels
from .errors import DatasetIntegrityError, ValidationError
from .postprocess import compact_labels
from .stain import RUIFROK_HE, extract_hematoxylin, render_stains

__all__ = [
    "IMAGE_EXTS",
    "Sample",
    "Patch",
    "AugmentConfig",
    "AugmentedExample",
    "FoldSplit",
    "read_image",
    "read_labels",
    "write_labels",
    "load_dataset",
    "mask_to_contours",
    "tile",
    "crop_into_patches",
    "augment",
    "make_folds",
    "synthetic_sample",
    "write_synthetic_corpus",
]

log = logging.getLogger(__name__)

IMAGE_EXTS = (".png", ".tif", ".tiff")
NATIVE_SIZE = 512
GRID = 4


@dataclass
class Sample:
    id: str
    organ: str
    image: np.ndarray  # HxWx3 uint8
    instances: np.ndarray  # HxW int32
    contour_thickness: int = 2
    binary_mask: np.ndarray = field(init=False)
    contours: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.image.shape[:2] != self.instances.shape:
            raise DatasetIntegrityError(
                f"{self.id}: image {self.image.shape[:2]} and mask {self.instances.shape} differ"
            )
        self.binary_mask = (self.instances > 0).astype(np.uint8)
        self.contours = mask_to_contours(self.instances, self.contour_thickness)


@dataclass
class Patch:
    """One grid cell of a sample, resized to the network input size."""

    sample_id: str
    index: int
    image: np.ndarray  # float32 HxWx3 in [0, 255]
    hematoxylin: np.ndarray  # float32 HxW in [0, 1]
    instances: np.ndarray  # int32 HxW, compact
    contours: np.ndarray  # uint8 HxW
    pre_resize_foreground: int = 0

    @property
    def seg_target(self):
        return (self.instances > 0).astype(np.uint8)


@dataclass
class AugmentedExample:
    image: np.ndarray
    hematoxylin: np.ndarray
    seg_target: np.ndarray
    contour_target: np.ndarray
    instances: np.ndarray
    provenance: dict


@dataclass(frozen=True)
class AugmentConfig:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    rotate: bool = True
    p_crop: float = 0.5
    crop_fraction: float = 224 / 256
    p_elastic: float = 0.5
    elastic_alpha: float = 34.0
    elastic_sigma: float = 4.0

    @classmethod
    def disabled(cls):
        return cls(p_hflip=0.0, p_vflip=0.0, rotate=False, p_crop=0.0, p_elastic=0.0)


# ---------------------------------------------------------------- file io


def read_image(path):
    img = skio.imread(str(path))
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    if img.shape[-1] == 4:
        img = img[..., :3]
    if img.dtype != np.uint8:
        img = np.clip(img, 0, 255).astype(np.uint8)
    return img


def read_labels(path):
    lab = skio.imread(str(path))
    if lab.ndim == 3:
        lab = lab[..., 0]
    return lab.astype(np.int32)


def write_labels(path, labels):
    labels = np.asarray(labels)
    if labels.size and labels.max() > np.iinfo(np.uint16).max:
        raise ValidationError(f"{path}: {labels.max()} instances do not fit a 16-bit label image")
    skio.imsave(str(path), labels.astype(np.uint16), check_contrast=False)


def write_image(path, image):
    skio.imsave(str(path), np.asarray(image, dtype=np.uint8), check_contrast=False)


def _index_dir(directory):
    if not Path(directory).is_dir():
        raise ValidationError(f"not a directory: {directory}")
    found = {}
    for p in sorted(Path(directory).iterdir()):
        if p.suffix.lower() in IMAGE_EXTS:
            found.setdefault(p.stem, p)
    return found


def organ_of(stem):
    return stem.split("_", 1)[0]


def load_dataset(root, contour_thickness=2):
    """Read every image/mask pair under ``root`` into :class:`Sample` objects."""
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    for d in (img_dir, mask_dir):
        if not d.is_dir():
            raise DatasetIntegrityError(f"missing directory {d}")
    images = _index_dir(img_dir)
    masks = _index_dir(mask_dir)
    orphans = sorted(set(images) - set(masks))
    if orphans:
        raise DatasetIntegrityError(
            "images without masks: " + ", ".join(images[o].name for o in orphans)
        )
    if not images:
        raise DatasetIntegrityError(f"no images found in {img_dir}")
    samples = []
    for stem, path in images.items():
        image = read_image(path)
        inst = read_labels(masks[stem])
        if image.shape[:2] != inst.shape:
            raise DatasetIntegrityError(
                f"{path.name}: image {image.shape[:2]} and mask {inst.shape} differ in size"
            )
        samples.append(Sample(stem, organ_of(stem), image, inst, contour_thickness))
    log.info("loaded %d samples from %s", len(samples), root)
    return samples


# ---------------------------------------------------------------- targets


def mask_to_contours(instances, thickness=2):
    """Mark foreground pixels within Chebyshev ``thickness`` of another label.

    Background pixels are never marked, so boundaries sit on the nucleus
    side; touching instances both get their shared edge. Image borders do
    not count as boundaries.
    """
    if thickness < 1:
        raise ValidationError(f"thickness must be >= 1, got {thickness}")
    labels = np.ascontiguousarray(instances, dtype=np.int64)
    return kernels.label_boundaries(labels, int(thickness))


# ---------------------------------------------------------------- patches


def _resize(arr, size, order):
    if arr.shape[0] == size and arr.shape[1] == size:
        return arr
    shape = (size, size) + arr.shape[2:]
    out = resize(
        arr.astype(np.float64 if order else arr.dtype),
        shape,
        order=order,
        mode="edge",
        anti_aliasing=False,
        preserve_range=True,
    )
    return out.astype(arr.dtype) if order == 0 else out


def tile(arr, grid=GRID):
    """Split an array into ``grid x grid`` equal cells in raster order."""
    h, w = arr.shape[:2]
    if h % grid or w % grid:
        raise ValidationError(f"size {h}x{w} is not divisible by grid {grid}")
    ch, cw = h // grid, w // grid
    return [arr[r * ch:(r + 1) * ch, c * cw:(c + 1) * cw] for r in range(grid) for c in range(grid)]


def untile(cells, grid=GRID):
    rows = [np.concatenate(cells[r * grid:(r + 1) * grid], axis=1) for r in range(grid)]
    return np.concatenate(rows, axis=0)


def make_patch(image, instances, contours, out_size, sample_id="", index=0, stains=RUIFROK_HE):
    image = _resize(np.asarray(image, dtype=np.float32), out_size, 1).astype(np.float32)
    inst = compact_labels(_resize(np.asarray(instances, dtype=np.int32), out_size, 0))
    cont = _resize(np.asarray(contours, dtype=np.uint8), out_size, 0)
    hema = extract_hematoxylin(image, stains).astype(np.float32)
    return Patch(sample_id, index, image, hema, inst.astype(np.int32), cont,
                 int((np.asarray(instances) > 0).sum()))


def crop_into_patches(sample, out_size=256, stains=RUIFROK_HE):
    """Cut a 512x512 sample into the 4x4 grid of 128x128 cells.

    Each cell is resized to ``out_size`` (bilinear for colour, nearest for
    labels and contours), labels are renumbered per cell and the hematoxylin
    map is extracted from the resized cell.
    """
    if sample.image.shape[:2] != (NATIVE_SIZE, NATIVE_SIZE):
        raise ValidationError(
            f"{sample.id}: expected {NATIVE_SIZE}x{NATIVE_SIZE}, got {sample.image.shape[:2]}"
        )
    cells = zip(tile(sample.image), tile(sample.instances), tile(sample.contours))
    return [
        make_patch(img, inst, cont, out_size, sample.id, k, stains)
        for k, (img, inst, cont) in enumerate(cells)
    ]


# ---------------------------------------------------------------- augmentation


def _warp(arr, coords, order):
    if arr.ndim == 3:
        return np.stack([_warp(arr[..., c], coords, order) for c in range(arr.shape[2])], axis=-1)
    out = ndimage.map_coordinates(arr.astype(np.float64), coords, order=order, mode="reflect")
    return out.astype(arr.dtype) if order == 0 else out.astype(np.float32)


def augment(example, rng_seed, config=AugmentConfig()):
    """Random flip / mirror / 90-degree rotation / crop-resize / elastic warp.

    The same geometry is applied to the image, hematoxylin map and targets
    (nearest-neighbour for the label-like arrays). Output depends only on
    ``example`` and ``rng_seed``.
    """
    rng = np.random.default_rng(rng_seed)
    image = np.asarray(example.image, dtype=np.float32)
    hema = np.asarray(example.hematoxylin, dtype=np.float32)
    inst = np.asarray(example.instances, dtype=np.int32)
    cont = np.asarray(example.contours, dtype=np.uint8)
    size = image.shape[0]
    applied = {}

    # draws happen in a fixed order so a seed means the same thing under any config
    u_h, u_v, k_rot, u_crop, u_el = rng.random(), rng.random(), int(rng.integers(4)), rng.random(), rng.random()
    crop_seed, elastic_seed = rng.integers(2**31, size=2)

    def geo(fn):
        nonlocal image, hema, inst, cont
        image, hema, inst, cont = fn(image), fn(hema), fn(inst), fn(cont)

    if u_h < config.p_hflip:
        geo(lambda a: a[:, ::-1])
        applied["hflip"] = True
    if u_v < config.p_vflip:
        geo(lambda a: a[::-1, :])
        applied["vflip"] = True
    if config.rotate and k_rot:
        geo(lambda a: np.rot90(a, k_rot))
        applied["rot90"] = k_rot
    if u_crop < config.p_crop:
        crng = np.random.default_rng(crop_seed)
        c = int(round(config.crop_fraction * size))
        r0, c0 = (int(v) for v in crng.integers(0, size - c + 1, size=2))
        sl = (slice(r0, r0 + c), slice(c0, c0 + c))
        image = _resize(image[sl], size, 1).astype(np.float32)
        hema = _resize(hema[sl], size, 1).astype(np.float32)
        inst = _resize(inst[sl], size, 0)
        cont = _resize(cont[sl], size, 0)
        applied["crop"] = (r0, c0, c)
    if u_el < config.p_elastic:
        erng = np.random.default_rng(elastic_seed)
        shape = image.shape[:2]
        dx = ndimage.gaussian_filter(erng.uniform(-1, 1, shape), config.elastic_sigma) * config.elastic_alpha
        dy = ndimage.gaussian_filter(erng.uniform(-1, 1, shape), config.elastic_sigma) * config.elastic_alpha
        yy, xx = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
        coords = np.array([yy + dy, xx + dx])
        image = _warp(image, coords, 1)
        hema = _warp(hema, coords, 1)
        inst = _warp(inst, coords, 0)
        cont = _warp(cont, coords, 0)
        applied["elastic"] = (config.elastic_alpha, config.elastic_sigma)

    inst = compact_labels(np.ascontiguousarray(inst)).astype(np.int32)
    return AugmentedExample(
        image=np.ascontiguousarray(image, dtype=np.float32),
        hematoxylin=np.ascontiguousarray(hema, dtype=np.float32),
        seg_target=(inst > 0).astype(np.uint8),
        contour_target=np.ascontiguousarray(cont, dtype=np.uint8),
        instances=inst,
        provenance={
            "sample_id": getattr(example, "sample_id", ""),
            "patch_index": getattr(example, "index", -1),
            "transforms": applied,
            "seed": int(rng_seed),
        },
    )


# ---------------------------------------------------------------- folds


@dataclass
class FoldSplit:
    """Hold-out sets, one per organ, in sorted organ order."""

    organs: list
    folds: list  # list of lists of sample ids
    all_ids: list

    def holdout(self, k):
        return list(self.folds[k])

    def train_ids(self, k):
        held = set(self.folds[k])
        return [i for i in self.all_ids if i not in held]

    def fold_of(self, sample_id):
        for k, ids in enumerate(self.folds):
            if sample_id in ids:
                return k
        return -1

    def __len__(self):
        return len(self.folds)

    def to_json(self):
        return {"organs": self.organs, "folds": self.folds, "all_ids": self.all_ids}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text())
        return cls(organs=d["organs"], folds=d["folds"], all_ids=d["all_ids"])


def make_folds(samples, per_organ=3):
    """One hold-out fold per organ; each organ must contribute ``per_organ`` samples."""
    by_organ = {}
    for s in samples:
        by_organ.setdefault(s.organ, []).append(s.id)
    bad = {o: len(v) for o, v in by_organ.items() if len(v) != per_organ}
    if bad:
        raise ValidationError(f"every organ needs exactly {per_organ} samples, got {bad}")
    organs = sorted(by_organ)
    return FoldSplit(
        organs=organs,
        folds=[sorted(by_organ[o]) for o in organs],
        all_ids=sorted(s.id for s in samples),
    )


# ---------------------------------------------------------------- synthetic data


def _draw_ellipse(labels, rng, label, cy, cx, ry, rx):
    h, w = labels.shape
    theta = rng.uniform(0, np.pi)
    r = int(np.ceil(max(ry, rx))) + 1
    y0, y1 = max(0, int(cy) - r), min(h, int(cy) + r + 1)
    x0, x1 = max(0, int(cx) - r), min(w, int(cx) + r + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy, dx = yy - cy, xx - cx
    u = dy * np.cos(theta) + dx * np.sin(theta)
    v = -dy * np.sin(theta) + dx * np.cos(theta)
    inside = (u / ry) ** 2 + (v / rx) ** 2 <= 1.0
    labels[y0:y1, x0:x1][inside] = label


def synthetic_instances(rng, size=512, n_nuclei=None, radius=(5.0, 11.0), touching=0.3):
    """Random elliptical nuclei; a fraction is placed touching a neighbour."""
    n = n_nuclei if n_nuclei is not None else int(rng.integers(size // 16, size // 8))
    labels = np.zeros((size, size), dtype=np.int32)
    centres = []
    for k in range(1, n + 1):
        ry, rx = rng.uniform(*radius, size=2)
        if centres and rng.random() < touching:
            py, px, pr = centres[int(rng.integers(len(centres)))]
            ang = rng.uniform(0, 2 * np.pi)
            dist = 0.9 * (pr + max(ry, rx))
            cy, cx = py + dist * np.sin(ang), px + dist * np.cos(ang)
        else:
            cy, cx = rng.uniform(radius[1], size - radius[1], size=2)
        if not (0 <= cy < size and 0 <= cx < size):
            continue
        _draw_ellipse(labels, rng, k, cy, cx, ry, rx)
        centres.append((cy, cx, max(ry, rx)))
    return compact_labels(labels).astype(np.int32)


def render_he(instances, rng, stains=RUIFROK_HE, noise=4.0):
    """Render an H&E-looking RGB image in which nuclei carry hematoxylin."""
    h, w = instances.shape
    fg = instances > 0
    conc = np.zeros((3, h, w))
    texture = ndimage.gaussian_filter(rng.normal(size=(h, w)), 3.0)
    conc[1] = 0.25 + 0.08 * texture
    conc[0] = 0.05 + 0.02 * texture
    strength = rng.uniform(0.7, 1.1, size=int(instances.max()) + 1)
    conc[0][fg] = strength[instances[fg]]
    conc[1][fg] *= 0.5
    # darker rim so boundaries are visible in the hematoxylin channel
    rim = mask_to_contours(instances, 1).astype(bool)
    conc[0][rim] *= 1.25
    conc = np.maximum(conc, 0.0)
    rgb = render_stains(conc, stains) + rng.normal(scale=noise, size=(h, w, 3))
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def synthetic_sample(rng, size=512, **kwargs):
    inst = synthetic_instances(rng, size, **kwargs)
    return render_he(inst, rng), inst


DEFAULT_ORGANS = (
    "adrenalgland", "larynx", "lymphnode", "mediastinum", "pancreas",
    "pleura", "skin", "testis", "thymus", "thyroidgland",
)


def write_synthetic_corpus(root, organs=DEFAULT_ORGANS, per_organ=3, size=512, seed=0, ext=".png"):
    """Write a CryoNuSeg-shaped synthetic corpus and return its sample ids."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = []
    for organ in organs:
        for k in range(per_organ):
            image, inst = synthetic_sample(rng, size)
            stem = f"{organ}_{k + 1:02d}"
            write_image(root / "images" / f"{stem}{ext}", image)
            write_labels(root / "masks" / f"{stem}{ext}", inst)
            ids.append(stem)
    return ids
