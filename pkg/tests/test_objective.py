import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glco.errors import ContractError, DimensionError
from glco.gradcheck import gradcheck
from glco.nn import Parameter
from glco.objective import Adam, step_decay, total_loss, weight_map, weighted_bce, weighted_iou
from glco.tensor import Tensor, backward


def blob_mask(n=16, seed=0):
    g = np.zeros((1, 1, n, n))
    r = np.random.default_rng(seed)
    y, x = r.integers(2, n - 6, size=2)
    g[..., y:y + 5, x:x + 6] = 1
    return g


def test_weight_map_examples():
    assert np.array_equal(weight_map(np.zeros((8, 8))), np.zeros((8, 8)))
    ones = weight_map(np.ones((32, 32)))
    assert np.all(ones[7:-7, 7:-7] == 0)
    assert ones[0, 0] > 0 and ones[6, 16] > 0
    g = np.zeros((32, 32))
    g[16, 16] = 1
    w = weight_map(g)
    assert w.max() == pytest.approx(5 * (1 - 1 / 225), abs=1e-12)
    assert np.unravel_index(np.argmax(w), w.shape) == (16, 16)


def test_weight_map_rejects_soft_masks():
    with pytest.raises(ContractError):
        weight_map(np.full((4, 4), 0.5))


def test_bce_closed_forms():
    for g in (np.zeros((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), blob_mask()):
        assert abs(float(weighted_bce(np.zeros(g.shape), g).data) - np.log(2)) < 1e-9
    g = blob_mask()
    saturated = np.where(g > 0, 20.0, -20.0)
    assert float(weighted_bce(saturated, g, weight_map(g)).data) < 1e-8


def test_bce_hand_case():
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    logit = np.log(0.8 / 0.2)
    x = np.where(g > 0, logit, -logit)
    assert float(weighted_bce(x, g).data) == pytest.approx(-np.log(0.8), abs=1e-12)


def test_iou_closed_forms():
    g = blob_mask()
    w = weight_map(g)
    assert float(weighted_iou(g, g, w).data) == 0.0
    assert float(weighted_iou(np.zeros_like(g), g, w).data) == 1.0
    assert float(weighted_iou(np.full((2, 2), 0.5), np.ones((2, 2))).data) == pytest.approx(0.5, abs=1e-12)


def test_iou_rejects_out_of_range_and_shape_mismatch():
    with pytest.raises(ContractError):
        weighted_iou(np.full((2, 2), 1.5), np.ones((2, 2)))
    with pytest.raises(DimensionError):
        weighted_bce(np.zeros((2, 2)), np.ones((3, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_losses_are_permutation_equivariant(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(6, 6))
    g = (r.random((6, 6)) < 0.4).astype(float)
    w = r.random((6, 6)) * 3
    perm = r.permutation(36)

    def shuf(a):
        return a.ravel()[perm].reshape(6, 6)
    b0 = float(weighted_bce(x, g, w).data)
    b1 = float(weighted_bce(shuf(x), shuf(g), shuf(w)).data)
    p = 1 / (1 + np.exp(-x))
    i0 = float(weighted_iou(p, g, w).data)
    i1 = float(weighted_iou(shuf(p), shuf(g), shuf(w)).data)
    assert b0 == pytest.approx(b1, abs=1e-12) and i0 == pytest.approx(i1, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 3.0))
def test_moving_a_pixel_toward_its_label_never_raises_bce(seed, delta):
    r = np.random.default_rng(seed)
    x = r.normal(size=(5, 5)) * 3
    g = (r.random((5, 5)) < 0.5).astype(float)
    w = r.random((5, 5))
    i, j = r.integers(0, 5, size=2)
    y = x.copy()
    y[i, j] += delta if g[i, j] else -delta
    assert float(weighted_bce(y, g, w).data) <= float(weighted_bce(x, g, w).data) + 1e-15


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.1, 50.0))
def test_uniform_weight_equals_unweighted_bce(seed, c):
    r = np.random.default_rng(seed)
    x = r.normal(size=(4, 7))
    g = (r.random((4, 7)) < 0.5).astype(float)
    a = float(weighted_bce(x, g, np.zeros((4, 7))).data)
    b = float(weighted_bce(x, g, np.full((4, 7), c)).data)
    assert a == pytest.approx(b, abs=1e-12)


def outputs(seed=0, b=1):
    r = np.random.default_rng(seed)
    return {i: Tensor(r.normal(size=(b, 1, 16 // 2 ** (i - 2), 16 // 2 ** (i - 2))), requires_grad=True)
            for i in (2, 3, 4)} | {5: Tensor(r.normal(size=(b, 1, 2, 2)), requires_grad=True),
                                   6: Tensor(r.normal(size=(b, 1, 2, 2)), requires_grad=True)}


def test_total_loss_sums_levels_and_is_additive():
    g = blob_mask()
    out = outputs()
    rep = total_loss(out, g)
    assert float(rep.total.data) == pytest.approx(sum(rep.level(i) for i in range(2, 7)), abs=1e-12)
    assert all(v >= 0 for v in list(rep.bce.values()) + list(rep.iou.values()))
    without = total_loss({i: d for i, d in out.items() if i != 4}, g)
    assert float(rep.total.data) - float(without.total.data) == pytest.approx(rep.level(4), abs=1e-12)


def test_total_loss_of_saturated_maps():
    g = blob_mask()
    out = {i: np.where(g > 0, 40.0, -40.0) for i in range(2, 7)}
    assert float(total_loss(out, g).total.data) < 1e-6


def test_total_loss_gradient_reaches_every_level_and_matches_fd():
    g = blob_mask(seed=2)
    out = outputs(3)
    backward(total_loss(out, g).total)
    assert all(np.abs(d.grad).max() > 0 for d in out.values())
    rest = {i: d for i, d in out.items() if i != 3}
    assert gradcheck(lambda d: total_loss(rest | {3: d}, g).total, out[3].data, samples=30) < 1e-6


def test_total_loss_mask_shape():
    with pytest.raises(DimensionError):
        total_loss(outputs(), np.zeros((16, 16)))


def test_step_decay_schedule():
    assert step_decay(0) == 1e-4 and step_decay(59) == 1e-4
    assert step_decay(60) == pytest.approx(1e-5, rel=1e-12)
    assert step_decay(179) == pytest.approx(1e-6, rel=1e-12)


def test_adam_zero_gradient_leaves_params():
    p = Parameter(np.arange(4.0))
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros(4)
    opt.step()
    opt.step()
    assert np.array_equal(p.data, np.arange(4.0)) and opt.t == 2


def test_adam_constant_gradient_steps_by_lr():
    p = Parameter(np.zeros(3))
    opt = Adam([p], lr=1e-3)
    for _ in range(500):
        before = p.data.copy()
        p.grad = np.array([0.5, -2.0, 1e-3])
        opt.step()
    assert np.allclose(before - p.data, 1e-3 * np.sign([0.5, -2.0, 1e-3]), rtol=1e-4)


def test_adam_first_step_is_lr_times_sign():
    p = Parameter(np.zeros(2))
    opt = Adam([p], lr=0.01)
    p.grad = np.array([3.0, -0.2])
    opt.step()
    assert np.allclose(p.data, [-0.01, 0.01], rtol=1e-6)


def test_adam_shape_mismatch_and_state_round_trip():
    p = Parameter(np.zeros(3))
    opt = Adam([p])
    p.grad = np.zeros(4)
    with pytest.raises(DimensionError):
        opt.step()
    p.grad = np.ones(3)
    opt.step()
    q = Parameter(np.zeros(3))
    other = Adam([q])
    other.load_state_arrays(opt.state_arrays())
    assert other.t == 1 and np.array_equal(other.m[0], opt.m[0])
