import math

import numpy as np
import pytest

from instconv.autodiff import grad_check
from instconv.losses import (
    EmptyMaskError, gradient_loss, l1_loss, loss_values, normal_loss, normals_from_depth,
    sobel_gradients, sobel_op, total_loss,
)

from oracles import sobel_loop, unexplained_fd_failures


def _pair(seed, h=8, w=8):
    rng = np.random.default_rng(seed)
    return rng.uniform(1, 5, size=(h, w)), rng.uniform(1, 5, size=(h, w))


def _val(v):
    return float(v.value.reshape(()))


# --- loop oracles -----------------------------------------------------------

def l1_oracle(d, g, m):
    vals = [abs(g[r, q] - d[r, q]) for r in range(d.shape[0]) for q in range(d.shape[1]) if m[r, q]]
    return math.fsum(vals) / len(vals)


def grad_oracle(d, g, m):
    dh, dv = sobel_loop(d)
    gh, gv = sobel_loop(g)
    vals = [abs(dh[r, q] - gh[r, q]) + abs(dv[r, q] - gv[r, q])
            for r in range(d.shape[0]) for q in range(d.shape[1]) if m[r, q]]
    return math.fsum(vals) / len(vals)


def normal_oracle(d, g, m):
    dh, dv = sobel_loop(d)
    gh, gv = sobel_loop(g)
    vals = []
    for r in range(d.shape[0]):
        for q in range(d.shape[1]):
            if not m[r, q]:
                continue
            n = (-dh[r, q], -dv[r, q], 1.0)
            t = (-gh[r, q], -gv[r, q], 1.0)
            dot = sum(a * b for a, b in zip(n, t))
            den = math.sqrt(sum(a * a for a in n)) * math.sqrt(sum(a * a for a in t))
            vals.append(1.0 - dot / max(den, 1e-8))
    return math.fsum(vals) / len(vals)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("masked", [False, True])
def test_losses_match_loop_oracles(seed, masked):
    d, g = _pair(seed)
    m = np.ones(d.shape, bool)
    if masked:
        m = np.random.default_rng(seed + 50).random(d.shape) > 0.3
    arg = m if masked else None
    assert _val(l1_loss(d, g, arg)) == pytest.approx(l1_oracle(d, g, m), rel=1e-12, abs=0)
    assert _val(gradient_loss(d, g, arg)) == pytest.approx(grad_oracle(d, g, m), rel=1e-12, abs=0)
    assert _val(normal_loss(d, g, arg)) == pytest.approx(normal_oracle(d, g, m), rel=1e-12, abs=1e-15)


def test_sobel_matches_loop():
    d, _ = _pair(9, 7, 9)
    gh, gv = sobel_gradients(d)
    oh, ov = sobel_loop(d)
    np.testing.assert_array_equal(gh, oh)
    np.testing.assert_array_equal(gv, ov)


def test_sobel_examples():
    gh, gv = sobel_gradients(np.full((5, 5), 2.0))
    assert not gh.any() and not gv.any()
    ramp = np.tile(np.arange(6.0), (5, 1))  # d(u, v) = v
    gh, gv = sobel_gradients(ramp)
    np.testing.assert_array_equal(gh[1:-1, 1:-1], 8.0)
    np.testing.assert_array_equal(gv, 0.0)
    d, _ = _pair(1)
    ah, av = sobel_gradients(d)
    bh, bv = sobel_gradients(d.T)
    np.testing.assert_allclose(ah, bv.T, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(av, bh.T, rtol=1e-13, atol=1e-13)
    with pytest.raises(ValueError):
        sobel_gradients(np.ones((2, 5)))


def test_normals_examples():
    n = normals_from_depth(np.full((4, 4), 3.0))
    np.testing.assert_array_equal(n, np.broadcast_to([0.0, 0.0, 1.0], (4, 4, 3)))
    ramp = np.tile(np.arange(6.0), (5, 1))
    n = normals_from_depth(ramp)
    np.testing.assert_array_equal(n[1:-1, 1:-1], np.broadcast_to([-8.0, 0.0, 1.0], (3, 4, 3)))
    d, _ = _pair(2)
    assert np.all(normals_from_depth(d)[..., 2] == 1.0)


def test_identical_inputs_give_zero():
    d, _ = _pair(3)
    parts = loss_values(d, d)
    assert (parts.l1, parts.grad, parts.normal, parts.total) == (0.0, 0.0, 0.0, 0.0)


def test_offset_behaviour():
    d, g = _pair(4)
    assert _val(l1_loss(g + 0.5, g)) == pytest.approx(0.5, abs=1e-15)
    assert _val(gradient_loss(g + 1.7, g)) == pytest.approx(0.0, abs=1e-12)
    # both shifted: gradient-based terms unchanged
    assert _val(gradient_loss(d + 3.0, g + 3.0)) == pytest.approx(_val(gradient_loss(d, g)), rel=1e-12)
    assert _val(normal_loss(d + 3.0, g + 3.0)) == pytest.approx(_val(normal_loss(d, g)), rel=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_loss_ranges_and_sum(seed):
    d, g = _pair(seed)
    parts = loss_values(d, g)
    assert parts.l1 >= 0 and parts.grad >= 0
    assert 0.0 <= parts.normal <= 2.0
    assert parts.total == parts.l1 + parts.grad + parts.normal


def test_empty_mask_rejected():
    d, g = _pair(0)
    for fn in (l1_loss, gradient_loss, normal_loss):
        with pytest.raises(EmptyMaskError):
            fn(d, g, np.zeros(d.shape, bool))


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        l1_loss(np.ones((4, 4)), np.ones((4, 5)))


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("name", ["l1", "grad", "normal", "total", "sobel_h", "sobel_v"])
def test_loss_grad_checks(seed, name):
    d, g = _pair(seed)
    m = np.random.default_rng(seed).random(d.shape) > 0.2
    w = np.random.default_rng(seed + 1).normal(size=(1, 8, 8))
    fns = {
        "l1": lambda x: l1_loss(x, g, m),
        "grad": lambda x: gradient_loss(x, g, m),
        "normal": lambda x: normal_loss(x, g, m),
        "total": lambda x: total_loss(x, g, m)[0],
        "sobel_h": lambda x: (sobel_op(x) * w).sum(),
        "sobel_v": lambda x: (sobel_op(x, vertical=True) * w).sum(),
    }
    rep = grad_check(fns[name], [d[None]])
    if name in ("grad", "total") and not rep.passed:
        # piecewise-linear term: exact cancellations leave a zero gradient that
        # central differences can only resolve to one ulp of f
        kinds, unexplained = unexplained_fd_failures(fns[name], [d[None]])
        assert not unexplained and kinds["kink"] == 0, (rep, kinds)
    else:
        assert rep.passed, rep
