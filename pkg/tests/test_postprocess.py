from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cryoseg.data import mask_to_contours
from cryoseg.errors import ValidationError
from cryoseg.postprocess import (
    MarkerMap,
    PostprocessParams,
    SmoothingParams,
    compact_labels,
    gaussian_kernel,
    gaussian_smooth,
    make_markers,
    segment_instances,
    watershed_segment,
)

from oracles import connected_components, overlapping_disks, separated_blobs


def maps_for(labels):
    return SimpleNamespace(
        seg_prob=(labels > 0).astype(float),
        contour_prob=mask_to_contours(labels).astype(float),
    )


def test_kernel_support_and_mass():
    for sigma, r in [(1.0, 3), (0.5, 2), (1.4, 5)]:
        k = gaussian_kernel(sigma)
        assert k.shape == (2 * r + 1, 2 * r + 1)
        assert k.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(k, k.T) and np.allclose(k, k[::-1])


def test_bad_sigma():
    with pytest.raises(ValidationError):
        SmoothingParams(0)


@pytest.mark.parametrize("c", [0.0, 0.3, 1.0])
def test_constant_map_unchanged(c):
    assert np.allclose(gaussian_smooth(np.full((9, 11), c)), c, atol=1e-12)


def test_impulse_gives_kernel():
    x = np.zeros((15, 15))
    x[7, 7] = 1
    assert np.allclose(gaussian_smooth(x)[4:11, 4:11], gaussian_kernel(1.0), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (12, 10), elements=st.floats(0, 1)))
def test_wrap_mode_conserves_mass(x):
    assert gaussian_smooth(x, mode="wrap").sum() == pytest.approx(x.sum(), abs=1e-9)


def test_linear_on_unit_interval(rng):
    a, b = rng.random((16, 16)), rng.random((16, 16))
    lhs = gaussian_smooth(0.3 * a + 0.6 * b)
    assert np.allclose(lhs, 0.3 * gaussian_smooth(a) + 0.6 * gaussian_smooth(b), atol=1e-12)


def test_markers_two_regions():
    seg = np.zeros((20, 30))
    seg[4:12, 3:10] = 0.9
    seg[4:12, 18:26] = 0.9
    m = make_markers(seg, np.zeros_like(seg))
    assert m.n_seeds == 2 and m.background == 3
    assert set(np.unique(m.labels)) == {0, 1, 2, 3}
    # unknown band is the two-pixel dilation ring
    assert m.labels[4, 1] == 0 and m.labels[4, 0] == 3


def test_markers_contour_bridge_splits():
    seg = np.zeros((12, 24))
    seg[2:10, 2:22] = 1
    contour = np.zeros_like(seg)
    contour[:, 11:13] = 1
    assert make_markers(seg, contour).n_seeds == 2
    assert make_markers(seg, np.zeros_like(seg)).n_seeds == 1


def test_markers_drop_small_seeds():
    seg = np.zeros((10, 10))
    seg[1:4, 1:4] = 1
    assert make_markers(seg, np.zeros_like(seg)).n_seeds == 0
    assert make_markers(seg, np.zeros_like(seg), min_seed_size=9).n_seeds == 1


def test_markers_validate():
    with pytest.raises(ValidationError):
        make_markers(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValidationError):
        make_markers(np.zeros((2, 2)), np.zeros((2, 2)), fg_threshold=1.0)


def test_markers_all_background():
    m = make_markers(np.zeros((5, 5)), np.zeros((5, 5)))
    assert m.n_seeds == 0 and np.all(m.labels == 1)


def test_watershed_no_seeds_is_empty():
    m = MarkerMap(labels=np.full((4, 4), 1, np.int64), n_seeds=0, background=1)
    assert not watershed_segment(np.ones((4, 4)), m).any()


def test_watershed_splits_at_valley():
    # two peaks separated by a valley column
    prob = np.tile(np.array([0.9, 1.0, 0.9, 0.6, 0.9, 1.0, 0.9]), (3, 1))
    markers = np.zeros((3, 7), np.int64)
    markers[1, 1] = 1
    markers[1, 5] = 2
    out = watershed_segment(prob, MarkerMap(markers, 2, 3), smoothing=None)
    assert np.all(out[:, :3] == 1) and np.all(out[:, 4:] == 2)


def test_watershed_background_becomes_zero():
    prob = np.array([[1.0, 0.9, 0.0, 0.0, 0.0]])
    markers = np.array([[1, 0, 0, 0, 2]], np.int64)
    out = watershed_segment(prob, MarkerMap(markers, 1, 2), smoothing=None)
    # the seed claims up to the first flat pixel, the background basin the rest
    assert out.tolist() == [[1, 1, 1, 0, 0]]


def test_watershed_foreground_keeps_largest_piece():
    prob = np.ones((1, 9))
    markers = np.zeros((1, 9), np.int64)
    markers[0, 0] = 1
    fg = np.ones((1, 9), bool)
    fg[0, 3] = False
    out = watershed_segment(prob, MarkerMap(markers, 1, 2), smoothing=None, foreground=fg)
    assert out.tolist() == [[0, 0, 0, 0, 1, 1, 1, 1, 1]]


def test_two_touching_disks_split(rng):
    for _ in range(10):
        lab = overlapping_disks(rng)
        out = segment_instances(maps_for(lab))
        assert out.max() == 2


@pytest.mark.parametrize("sigma", [0.5, 1.0])
def test_separated_blobs_match_components(rng, sigma):
    params = PostprocessParams(sigma=sigma)
    for _ in range(10):
        lab = separated_blobs(rng)
        out = segment_instances(maps_for(lab), params)
        fg = gaussian_smooth((lab > 0).astype(float), SmoothingParams(sigma)) >= 0.5
        assert np.array_equal(out, connected_components(fg))


def test_small_instances_removed():
    lab = np.zeros((20, 20), np.int32)
    lab[2:4, 2:4] = 1
    lab[8:16, 8:16] = 2
    out = segment_instances(maps_for(lab), PostprocessParams(sigma=0.5))
    assert out.max() == 1 and not out[2:4, 2:4].any()


def test_empty_prediction():
    z = np.zeros((16, 16))
    assert not segment_instances(SimpleNamespace(seg_prob=z, contour_prob=z)).any()


def test_compact_labels():
    lab = np.array([[0, 7, 7], [3, 0, 9]])
    assert compact_labels(lab).tolist() == [[0, 2, 2], [1, 0, 3]]
    assert compact_labels(lab, raster_order=True).tolist() == [[0, 1, 1], [2, 0, 3]]
    assert compact_labels(np.zeros((2, 2), int)).max() == 0
