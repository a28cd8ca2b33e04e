import json

import numpy as np
import pytest

from cryoseg.data import (
    AugmentConfig,
    FoldSplit,
    Patch,
    Sample,
    augment,
    crop_into_patches,
    load_dataset,
    make_folds,
    mask_to_contours,
    read_labels,
    tile,
    untile,
    write_image,
    write_labels,
)
from cryoseg.errors import DatasetIntegrityError, ValidationError

from oracles import brute_contours

D4_ONLY = AugmentConfig(p_hflip=0.5, p_vflip=0.5, rotate=True, p_crop=0.0, p_elastic=0.0)
EVERYTHING = AugmentConfig(p_hflip=1.0, p_vflip=1.0, rotate=True, p_crop=1.0, p_elastic=1.0)


def test_load_small_corpus(small_corpus):
    samples = load_dataset(small_corpus)
    assert len(samples) == 6
    assert {s.organ for s in samples} == {"larynx", "skin"}
    s = samples[0]
    assert s.image.shape == (512, 512, 3) and s.image.dtype == np.uint8
    assert s.instances.shape == (512, 512) and s.instances.max() > 10
    assert np.array_equal(s.binary_mask, s.instances > 0)


def test_orphan_image_is_named(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    write_image(tmp_path / "images" / "skin_01.png", np.zeros((8, 8, 3)))
    with pytest.raises(DatasetIntegrityError, match="skin_01.png"):
        load_dataset(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(DatasetIntegrityError):
        load_dataset(tmp_path)


def test_size_mismatch(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    write_image(tmp_path / "images" / "skin_01.png", np.zeros((8, 8, 3)))
    write_labels(tmp_path / "masks" / "skin_01.png", np.zeros((6, 8)))
    with pytest.raises(DatasetIntegrityError):
        load_dataset(tmp_path)


def test_labels_round_trip(tmp_path):
    lab = np.arange(600, dtype=np.int32).reshape(20, 30)
    write_labels(tmp_path / "m.png", lab)
    assert np.array_equal(read_labels(tmp_path / "m.png"), lab)
    with pytest.raises(ValidationError):
        write_labels(tmp_path / "big.png", np.full((2, 2), 70000))


def test_single_pixel_contour():
    lab = np.zeros((5, 5), np.int32)
    lab[2, 2] = 4
    out = mask_to_contours(lab, 1)
    assert out.sum() == 1 and out[2, 2] == 1


def test_touching_squares_contour():
    lab = np.zeros((7, 8), np.int32)
    lab[2:5, 1:4] = 1
    lab[2:5, 4:7] = 2
    for t in (1, 2):
        assert np.array_equal(mask_to_contours(lab, t), brute_contours(lab, t))
    # both sides of the shared edge are marked
    out = mask_to_contours(lab, 1)
    assert out[3, 3] == 1 and out[3, 4] == 1


def test_full_image_instance_has_no_contour():
    assert not mask_to_contours(np.ones((6, 6), np.int32)).any()


def test_contours_bad_thickness():
    with pytest.raises(ValidationError):
        mask_to_contours(np.zeros((3, 3)), 0)


def test_tile_round_trip(rng):
    a = rng.random((512, 512, 3))
    cells = tile(a)
    assert len(cells) == 16 and cells[5].shape == (128, 128, 3)
    assert np.array_equal(cells[5], a[128:256, 128:256])
    assert np.array_equal(untile(cells), a)
    with pytest.raises(ValidationError):
        tile(np.zeros((10, 10)))


def test_crop_into_patches(small_corpus):
    s = load_dataset(small_corpus)[0]
    patches = crop_into_patches(s)
    assert len(patches) == 16
    assert sum(p.pre_resize_foreground for p in patches) == int((s.instances > 0).sum())
    for k, p in enumerate(patches):
        assert p.index == k and p.sample_id == s.id
        assert p.image.shape == (256, 256, 3) and p.image.dtype == np.float32
        assert p.hematoxylin.shape == (256, 256)
        assert 0 <= p.hematoxylin.min() and p.hematoxylin.max() <= 1
        ids = np.unique(p.instances)
        assert np.array_equal(ids, np.arange(ids.size))
    # nearest-neighbour 2x upsampling replicates every cell pixel
    cell = tile(s.instances)[3]
    assert (patches[3].instances > 0).sum() == 4 * (cell > 0).sum()


def test_crop_requires_native_size():
    s = Sample("x_1", "x", np.zeros((256, 256, 3), np.uint8), np.zeros((256, 256), np.int32))
    with pytest.raises(ValidationError):
        crop_into_patches(s)


def _patch(rng, size=32):
    lab = np.zeros((size, size), np.int32)
    lab[3:10, 4:12] = 1
    lab[14:25, 9:20] = 2
    lab[20:30, 22:30] = 3
    img = rng.uniform(0, 255, (size, size, 3)).astype(np.float32)
    return Patch("s", 0, img, rng.random((size, size)).astype(np.float32), lab,
                 mask_to_contours(lab), int((lab > 0).sum()))


def test_augment_deterministic(rng):
    p = _patch(rng)
    a, b = augment(p, 17, EVERYTHING), augment(p, 17, EVERYTHING)
    for name in ("image", "hematoxylin", "instances", "contour_target"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.provenance == b.provenance
    assert set(a.provenance["transforms"]) == {"hflip", "vflip", "crop", "elastic"} | (
        {"rot90"} if "rot90" in a.provenance["transforms"] else set()
    )


def test_augment_disabled_is_identity(rng):
    p = _patch(rng)
    out = augment(p, 3, AugmentConfig.disabled())
    assert np.array_equal(out.image, p.image)
    assert np.array_equal(out.hematoxylin, p.hematoxylin)
    assert np.array_equal(out.instances, p.instances)
    assert out.provenance["transforms"] == {}


def test_hflip_is_an_involution(rng):
    p = _patch(rng)
    cfg = AugmentConfig(p_hflip=1.0, p_vflip=0.0, rotate=False, p_crop=0.0, p_elastic=0.0)
    once = augment(p, 0, cfg)
    twice = augment(Patch("s", 0, once.image, once.hematoxylin, once.instances, once.contour_target), 0, cfg)
    assert np.array_equal(twice.image, p.image)
    assert np.array_equal(twice.instances, p.instances)


def test_contours_equivariant_under_d4(rng):
    p = _patch(rng)
    for seed in range(12):
        out = augment(p, seed, D4_ONLY)
        assert np.array_equal(out.contour_target, mask_to_contours(out.instances))
        assert np.array_equal(out.seg_target, out.instances > 0)


def test_geometry_shared_by_all_channels(rng):
    # image and hematoxylin carry the same picture, the labels its support
    p = _patch(rng)
    value = (p.instances > 0).astype(np.float32) * 120
    p = Patch("s", 0, np.stack([value] * 3, axis=-1), value / 120, p.instances, p.contours)
    for seed in range(6):
        out = augment(p, seed, EVERYTHING)
        # both go through the same bilinear resampling
        assert np.allclose(out.hematoxylin * 120, out.image[..., 0], atol=1e-3)
        # nearest vs bilinear only disagree along blurred edges
        fg_img = out.image[..., 0] > 60
        fg_lab = out.instances > 0
        assert (fg_img & fg_lab).sum() / (fg_img | fg_lab).sum() > 0.85


def _fake_samples(organs, per):
    z = np.zeros((4, 4), np.int32)
    return [Sample(f"{o}_{k}", o, np.zeros((4, 4, 3), np.uint8), z) for o in organs for k in range(per)]


def test_make_folds_organ_pure():
    samples = _fake_samples(["thymus", "adrenal", "skin"], 3)
    split = make_folds(samples)
    assert split.organs == ["adrenal", "skin", "thymus"]
    assert split.holdout(1) == ["skin_0", "skin_1", "skin_2"]
    assert len(split.train_ids(1)) == 6 and not set(split.train_ids(1)) & set(split.holdout(1))
    assert split.fold_of("thymus_2") == 2 and split.fold_of("nope") == -1


def test_make_folds_wrong_count():
    with pytest.raises(ValidationError):
        make_folds(_fake_samples(["a", "b"], 3)[:-1])


def test_fold_split_round_trip(tmp_path):
    split = make_folds(_fake_samples(["a", "b"], 3))
    split.save(tmp_path / "f.json")
    assert FoldSplit.load(tmp_path / "f.json") == split
    assert json.loads((tmp_path / "f.json").read_text())["folds"][0] == ["a_0", "a_1", "a_2"]
