import math

import numpy as np
import pytest
import torch

from cryoseg.errors import ValidationError
from cryoseg.losses import LossWeights, bce_loss, soft_dice_loss, total_loss
from cryoseg.model import BranchOutputs

from oracles import central_difference

t64 = lambda a: torch.as_tensor(np.asarray(a, dtype=np.float64))


def test_bce_symmetric_point(rng):
    y = rng.integers(0, 2, size=(8, 8))
    assert float(bce_loss(t64(np.full((8, 8), 0.5)), t64(y))) == pytest.approx(math.log(2), abs=1e-12)


def test_bce_perfect_prediction(rng):
    y = t64(rng.integers(0, 2, size=(8, 8)))
    assert 0 <= float(bce_loss(y.clone(), y)) <= 1.2e-7


def test_bce_two_pixels():
    v = float(bce_loss(t64([0.9, 0.2]), t64([1, 0])))
    assert v == pytest.approx(-0.5 * (math.log(0.9) + math.log(0.8)), abs=1e-12)
    assert v == pytest.approx(0.164252, abs=1e-6)


def test_dice_constants(rng):
    y = np.zeros((8, 8))
    y[2:5, 3:7] = 1
    assert float(soft_dice_loss(t64(y), t64(y))) <= 1e-6
    assert float(soft_dice_loss(t64(np.zeros((8, 8))), t64(y))) == pytest.approx(1.0, abs=1e-6)
    half = float(soft_dice_loss(t64(np.full((8, 8), 0.5)), t64(np.ones((8, 8)))))
    assert half == pytest.approx(0.2, abs=1e-6)
    assert float(soft_dice_loss(t64(np.zeros((4, 4))), t64(np.zeros((4, 4))))) == 0.0


def test_shape_mismatch():
    with pytest.raises(ValidationError):
        bce_loss(torch.zeros(3), torch.zeros(4))
    with pytest.raises(ValidationError):
        soft_dice_loss(torch.zeros(3), torch.zeros(4))


def _analytic_grad(fn, x, y):
    xt = t64(x).requires_grad_(True)
    fn(xt, t64(y)).backward()
    return xt.grad.numpy()


def _max_rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


@pytest.mark.parametrize("fn", [bce_loss, soft_dice_loss], ids=["bce", "dice"])
def test_gradient_matches_finite_differences(fn, rng):
    for _ in range(5):
        x = rng.uniform(0.05, 0.95, size=(8, 8))
        y = rng.integers(0, 2, size=(8, 8))
        fd = central_difference(lambda v: float(fn(t64(v), t64(y))), x, 1e-4)
        assert _max_rel_err(_analytic_grad(fn, x, y), fd) < 1e-3


@pytest.mark.parametrize("fn", [bce_loss, soft_dice_loss], ids=["bce", "dice"])
def test_permutation_invariance(fn, rng):
    x = rng.uniform(0.01, 0.99, size=64)
    y = rng.integers(0, 2, size=64)
    perm = rng.permutation(64)
    assert float(fn(t64(x), t64(y))) == pytest.approx(float(fn(t64(x[perm]), t64(y[perm]))), abs=1e-12)


def test_dice_symmetric_for_binary(rng):
    x = rng.integers(0, 2, size=(8, 8))
    y = rng.integers(0, 2, size=(8, 8))
    assert float(soft_dice_loss(t64(x), t64(y))) == pytest.approx(float(soft_dice_loss(t64(y), t64(x))))


def _outputs(rng, shape=(8, 8)):
    return BranchOutputs(*(t64(rng.uniform(0.01, 0.99, size=shape)) for _ in range(3)))


def test_total_weight_selection(rng):
    out = _outputs(rng)
    seg = t64(rng.integers(0, 2, size=(8, 8)))
    cont = t64(rng.integers(0, 2, size=(8, 8)))
    total, terms = total_loss(out, seg, cont, LossWeights(0, 0, 0, 1))
    assert float(total) == float(terms["seg_sd"])


def test_total_is_sum_of_terms(rng):
    out = _outputs(rng)
    seg = t64(rng.integers(0, 2, size=(8, 8)))
    cont = t64(rng.integers(0, 2, size=(8, 8)))
    total, _ = total_loss(out, seg, cont, LossWeights(1, 1, 1, 1))
    recomputed = (
        float(bce_loss(out.rgb_prob, seg))
        + float(soft_dice_loss(out.contour_prob, cont))
        + float(bce_loss(out.seg_prob, seg))
        + float(soft_dice_loss(out.seg_prob, seg))
    )
    assert abs(float(total) - recomputed) < 1e-9


def test_total_perfect(rng):
    seg = t64(rng.integers(0, 2, size=(8, 8)))
    cont = t64(rng.integers(0, 2, size=(8, 8)))
    total, _ = total_loss(BranchOutputs(seg, cont, seg), seg, cont)
    assert float(total) <= 1e-5


def test_total_linear_in_weights(rng):
    out = _outputs(rng)
    seg = t64(rng.integers(0, 2, size=(8, 8)))
    cont = t64(rng.integers(0, 2, size=(8, 8)))
    a = float(total_loss(out, seg, cont, LossWeights(1, 2, 0.5, 1))[0])
    b = float(total_loss(out, seg, cont, LossWeights(2, 4, 1.0, 2))[0])
    assert b == pytest.approx(2 * a, rel=1e-12)


def test_seg_st_pluggable(rng):
    out = _outputs(rng)
    seg = t64(rng.integers(0, 2, size=(8, 8)))
    cont = t64(rng.integers(0, 2, size=(8, 8)))
    _, terms = total_loss(out, seg, cont, seg_st="dice")
    assert float(terms["seg_st"]) == float(terms["seg_sd"])
    _, terms = total_loss(out, seg, cont, seg_st=lambda x, y: (x - y).abs().mean())
    assert float(terms["seg_st"]) == pytest.approx(float((out.seg_prob - seg).abs().mean()))


def test_total_shape_mismatch(rng):
    out = _outputs(rng)
    with pytest.raises(ValidationError):
        total_loss(out, t64(np.zeros((4, 4))), t64(np.zeros((8, 8))))


@pytest.mark.parametrize("w", [(-1, 1, 1, 1), (0, 0, 0, 0)])
def test_bad_weights(w):
    with pytest.raises(ValidationError):
        LossWeights(*w)
