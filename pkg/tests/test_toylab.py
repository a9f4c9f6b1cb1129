import numpy as np
import pytest

from instconv.autodiff import Tape, grad_check
from instconv.conv import instance_conv2d_op
from instconv.losses import total_loss
from instconv.toylab import (
    AdamState, Comparison, DivergenceError, NetConfig, adam_step, build_net, compare_heads,
    gen_scene, init_params, overfit,
)
from instconv.toylab.experiment import COMPARE_FIELDS
from instconv.metrics import MetricsReport


# --- scenes -------------------------------------------------------------------

def test_scene_deterministic():
    a, b = gen_scene(3, 48), gen_scene(3, 48)
    for f in ("rgb", "depth", "boundaries", "owner"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    assert gen_scene(4, 48).rgb.tobytes() != a.rgb.tobytes()


def test_scene_argument_checks():
    with pytest.raises(ValueError):
        gen_scene(0, 16)
    for n in (0, 1, 9):
        with pytest.raises(ValueError):
            gen_scene(0, 64, n)
    assert gen_scene(0, 64, 2).boundaries.any()


@pytest.mark.parametrize("seed", range(15))
def test_scene_invariants(seed):
    sc = gen_scene(seed, 64)
    assert sc.rgb.min() >= 0 and sc.rgb.max() <= 1
    assert sc.depth.min() >= 1.0 and sc.depth.max() <= 6.0
    # every boundary pixel has a neighbour on another surface at least 0.5 m behind
    d = np.pad(sc.depth, 1, mode="edge")
    o = np.pad(sc.owner, 1, mode="edge")
    jumps = np.zeros(sc.depth.shape, bool)
    for dy, dx in ((0, 1), (1, 0), (1, 2), (2, 1)):
        nd = d[dy:dy + 64, dx:dx + 64]
        no = o[dy:dy + 64, dx:dx + 64]
        jumps |= (no != sc.owner) & (nd - sc.depth >= 0.5)
    assert np.array_equal(jumps, sc.boundaries)
    # depth is constant inside each shape and changes only across owners
    for i in range(1, sc.owner.max() + 1):
        assert np.ptp(sc.depth[sc.owner == i]) == 0


# --- optimiser ----------------------------------------------------------------

def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_is_sign():
    g = np.array([0.3, -5.0, 1e-3])
    p = {"w": np.zeros(3)}
    adam_step(p, {"w": g}, AdamState(), 0.01)
    np.testing.assert_allclose(p["w"], -0.01 * np.sign(g), rtol=1e-4)


def test_adam_quadratic_bowl():
    p = {"x": np.array([3.0])}
    st = AdamState()
    for step in range(2000):
        adam_step(p, {"x": 2 * (p["x"] - 1.0)}, st, 1e-2)
        if (p["x"][0] - 1.0) ** 2 < 1e-6:
            break
    assert (p["x"][0] - 1.0) ** 2 < 1e-6


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), 0.1)


# --- networks -----------------------------------------------------------------

def _segments(size, seed=0):
    from instconv.superpixel import SlicParams, slic
    return slic(gen_scene(seed, size).rgb, SlicParams(k=16))


def test_config_validation():
    with pytest.raises(ValueError):
        NetConfig(head="xx")
    with pytest.raises(ValueError):
        NetConfig(head_channels=(4, 6, 8))
    with pytest.raises(ValueError):
        NetConfig(head_channels=(8, 4))
    with pytest.raises(ValueError):
        NetConfig(warmup_steps=-1)


@pytest.mark.parametrize("head", ["sc", "sc_mask", "ic"])
def test_forward_shape_and_positive(head):
    sc = gen_scene(1, 64)
    net = build_net(NetConfig(head=head), _segments(64, 1))
    out = net.predict(sc.rgb)
    assert out.shape == (64, 64)
    assert np.all(out > 0) and np.isfinite(out).all()


def test_segment_map_required():
    net = build_net(NetConfig(head="ic"))
    with pytest.raises(ValueError):
        net.predict(gen_scene(0, 32).rgb)


def test_ic_equals_sc_on_single_segment():
    sc = gen_scene(2, 64)
    params = init_params(NetConfig(head="sc"))
    one = np.zeros((64, 64), dtype=np.int64)
    a = build_net(NetConfig(head="sc"), one)
    b = build_net(NetConfig(head="ic"), one)
    a.params = b.params = params
    pa, pb = a.predict(sc.rgb), b.predict(sc.rgb)
    # IC renormalises at the image border, so compare pixels whose 7x7 head
    # receptive field lies inside the image
    inner = (slice(3, -3), slice(3, -3))
    assert np.all(np.abs(pa[inner] - pb[inner]) <= 1e-4 * np.abs(pa[inner]))


@pytest.mark.parametrize("head", ["sc", "sc_mask", "ic"])
def test_all_parameters_receive_gradient(head):
    sc = gen_scene(5, 32)
    net = build_net(NetConfig(head=head), _segments(32, 5))
    tape = Tape()
    pred, leaves = net.forward(tape, sc.rgb)
    loss, _ = total_loss(pred, sc.depth)
    grads = tape.backward(loss)
    for name, v in leaves.items():
        assert np.any(grads[v.id] != 0), name


def test_ic_head_boundary_independence():
    rng = np.random.default_rng(0)
    seg = _segments(32, 3)
    net = build_net(NetConfig(head="ic"), seg)
    c = net.cfg.dec_channels[1]
    feats = rng.normal(size=(c, 32, 32))

    def head_out(f):
        tape = Tape()
        p = {k: tape.leaf(v) for k, v in net.params.items()}
        return net.head(tape, p, tape.leaf(f)).value[0]

    base = head_out(feats)
    sigma = seg[16, 16]
    pert = feats.copy()
    pert[:, seg != sigma] += rng.normal(size=(c, int((seg != sigma).sum())))
    after = head_out(pert)
    assert base[seg == sigma].tobytes() == after[seg == sigma].tobytes()
    assert not np.array_equal(base, after)


def _crop_scene(seed, size=16):
    sc = gen_scene(seed, 32)
    return sc.rgb[8:8 + size, 8:8 + size].copy(), sc.depth[8:8 + size, 8:8 + size].copy()


def net_grad_check(seed, head, max_checks=6):
    rgb, depth = _crop_scene(seed)
    from instconv.superpixel import SlicParams, slic
    cfg = NetConfig(head=head, seed=seed, enc_channels=(4, 6), dec_channels=(4, 4),
                    head_channels=(4, 3, 2))
    net = build_net(cfg, slic(rgb, SlicParams(k=8)))
    names = sorted(net.params)

    def fn(*vs):
        pred, _ = net.forward(vs[0].tape, rgb, dict(zip(names, vs)))
        return total_loss(pred, depth)[0]

    return grad_check(fn, [net.params[n] for n in names], max_checks=max_checks,
                      rng=np.random.default_rng(seed))


@pytest.mark.parametrize("head", ["sc", "ic"])
def test_net_grad_check(head):
    rep = net_grad_check(0, head)
    assert rep.passed, rep


# --- harness ------------------------------------------------------------------

def test_overfit_short_run_deterministic():
    sc = gen_scene(0, 32)
    cfg = NetConfig(head="ic", steps=30, k=16)
    seen = []
    a = overfit(sc, cfg, callback=lambda i, p: seen.append(i))
    b = overfit(sc, cfg)
    assert seen == list(range(30))
    assert [p.total for p in a.losses] == [p.total for p in b.losses]
    assert a.prediction.tobytes() == b.prediction.tobytes()
    assert a.losses[-1].total < a.losses[0].total
    assert a.report.absrel is not None


def test_overfit_divergence_detected():
    sc = gen_scene(0, 32)
    sc.depth[0, 0] = np.nan
    with pytest.raises(DivergenceError):
        overfit(sc, NetConfig(steps=2, k=16))


def test_compare_needs_five_seeds():
    with pytest.raises(ValueError):
        compare_heads([0, 1], {"sc": NetConfig(head="sc")})


def test_comparison_table():
    reps = {h: [MetricsReport(absrel=0.1 * i, rmse=1.0, dbe_acc=float(i), dbe_comp=2.0)
                for i in range(5)] for h in ("sc", "ic")}
    comp = Comparison(["sc", "ic"], list(range(5)), reps)
    rows = comp.rows()
    assert len(rows) == 6 and rows[-1]["seed"] == "median"
    assert comp.medians("ic")["dbe_acc"] == 2.0
    assert comp.columns() == ["seed"] + [f"{h}_{f}" for h in ("sc", "ic") for f in COMPARE_FIELDS]


def test_compare_identical_configs_identical_columns():
    cfg = NetConfig(head="sc", steps=3, k=16)
    comp = compare_heads(range(5), {"a": cfg, "b": cfg}, size=32)
    for row in comp.rows():
        for f in COMPARE_FIELDS:
            assert row[f"a_{f}"] == row[f"b_{f}"]
