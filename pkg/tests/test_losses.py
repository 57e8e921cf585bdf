import math
import warnings

import numpy as np
import pytest

from curvesplat.bezier import bernstein
from curvesplat.losses import (
    SSIM_C1, SSIM_C2, FrameSupervision, LossWeights, depth_loss, dynamic_rendering_loss, inter_curve_consistency,
    l1_loss, sky_opacity_loss, ssim_loss, total_loss, velocity_loss,
)
from curvesplat.raster import RenderMaps, RenderSettings, render, render_adjoint
from curvesplat.randomscene import axis_camera, random_primitives
from curvesplat.sky import SkyCubemap


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


# ---------------------------------------------------------------- L1


def test_l1_examples():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(6, 5, 3))
    assert l1_loss(a, a)[0] == 0.0
    assert l1_loss(a + 0.1, a)[0] == pytest.approx(0.1, abs=1e-15)


def test_l1_empty_mask_warns():
    a = np.ones((4, 4, 3))
    with pytest.warns(UserWarning):
        v, g = l1_loss(a, 0 * a, np.zeros((4, 4)))
    assert v == 0.0 and not g.any()


def test_l1_adjoint_fd():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    mask = rng.uniform(size=(8, 8)) < 0.6
    for m in (None, mask):
        g = l1_loss(a, b, m)[1]
        num = fd_grad(lambda x: l1_loss(x, b, m)[0], a.copy())
        assert np.max(np.abs(g - num)) < 1e-6


# -------------------------------------------------------------- SSIM


def direct_ssim(a, b, win=11, sigma=1.5):
    x = np.arange(win) - win // 2
    k = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(k, k)
    w /= w.sum()
    h, wd = a.shape[:2]
    vals = []
    for c in range(a.shape[2]):
        for i in range(h - win + 1):
            for j in range(wd - win + 1):
                pa, pb = a[i : i + win, j : j + win, c], b[i : i + win, j : j + win, c]
                ma, mb = np.sum(w * pa), np.sum(w * pb)
                va, vb = np.sum(w * pa * pa) - ma**2, np.sum(w * pb * pb) - mb**2
                cab = np.sum(w * pa * pb) - ma * mb
                vals.append(((2 * ma * mb + SSIM_C1) * (2 * cab + SSIM_C2)) / ((ma**2 + mb**2 + SSIM_C1) * (va + vb + SSIM_C2)))
    return float(np.mean(vals))


def test_ssim_identical_is_zero():
    a = np.random.default_rng(2).uniform(size=(16, 16, 3))
    assert ssim_loss(a, a)[0] == pytest.approx(0.0, abs=1e-12)


def test_ssim_checkerboard_inverse_near_two():
    ii, jj = np.indices((16, 16))
    a = np.repeat(((ii + jj) % 2).astype(float)[..., None], 3, axis=2)
    value = ssim_loss(a, 1 - a)[0]
    assert value == pytest.approx(1.0 - direct_ssim(a, 1 - a), abs=1e-12)
    assert value > 1.95


def test_ssim_matches_direct_on_random():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(size=(14, 13, 3)), rng.uniform(size=(14, 13, 3))
    assert ssim_loss(a, b)[0] == pytest.approx(1.0 - direct_ssim(a, b), abs=1e-12)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim_loss(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))


def test_ssim_adjoint_fd():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
    g = ssim_loss(a, b)[1]
    num = fd_grad(lambda x: ssim_loss(x, b)[0], a.copy())
    assert np.max(np.abs(g - num)) < 1e-5


# ------------------------------------------------------ depth and sky


def test_depth_examples():
    rng = np.random.default_rng(5)
    d = rng.uniform(0.1, 1.0, (8, 8))
    valid = rng.uniform(size=(8, 8)) < 0.3
    assert depth_loss(d, valid, d)[0] == 0.0
    assert depth_loss(d, valid, d + 0.5)[0] == pytest.approx(0.5, abs=1e-15)
    with pytest.warns(UserWarning):
        assert depth_loss(d, np.zeros((8, 8), bool), d + 1)[0] == 0.0


def test_depth_adjoint_fd():
    rng = np.random.default_rng(6)
    d, dg = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
    valid = rng.uniform(size=(8, 8)) < 0.5
    g = depth_loss(d, valid, dg)[1]
    num = fd_grad(lambda x: depth_loss(d, valid, x)[0], dg.copy())
    assert np.max(np.abs(g - num)) < 1e-6


def test_sky_examples():
    m = np.zeros((4, 4))
    m[:2] = 1
    assert sky_opacity_loss(m, np.zeros((4, 4)))[0] == 0.0
    assert abs(sky_opacity_loss(m, np.full((4, 4), 0.5))[0] - math.log(2)) <= 1e-12
    assert sky_opacity_loss(m, np.ones((4, 4)))[0] == pytest.approx(-math.log(1e-6), rel=1e-15)
    # pixels outside the sky do not count
    o = np.zeros((4, 4))
    o[2:] = 0.9
    assert sky_opacity_loss(m, o)[0] == 0.0


def test_sky_adjoint_fd():
    rng = np.random.default_rng(7)
    m = (rng.uniform(size=(8, 8)) < 0.5).astype(float)
    o = rng.uniform(0.0, 0.9, (8, 8))
    g = sky_opacity_loss(m, o)[1]
    num = fd_grad(lambda x: sky_opacity_loss(m, x)[0], o.copy())
    assert np.max(np.abs(g - num)) < 1e-6


# ------------------------------------------------- curve consistency


def test_icc_constant_offsets_zero():
    rng = np.random.default_rng(8)
    p = rng.normal(size=(5, 1, 3))
    offsets = np.repeat(p, 4, axis=1)
    assert inter_curve_consistency(offsets, rng.uniform(size=5))[0] == pytest.approx(0.0, abs=1e-15)


def test_icc_linear_norm_curve_zero_at_midpoint():
    e = np.array([0.6, 0.0, 0.8])
    offsets = np.array([[e * 1.0, e * 5 / 3, e * 7 / 3, e * 3.0]])
    assert inter_curve_consistency(offsets, np.array([0.5]))[0] == pytest.approx(0.0, abs=1e-14)


def test_icc_matches_hand_evaluation_and_permutation():
    rng = np.random.default_rng(9)
    offsets = rng.normal(size=(7, 4, 3))
    t = rng.uniform(size=7)
    hand = np.mean([
        abs(np.linalg.norm(sum(bernstein(i, 3, ti) * o[i] for i in range(4))) - 0.5 * (np.linalg.norm(o[0]) + np.linalg.norm(o[-1])))
        for o, ti in zip(offsets, t)
    ])
    v = inter_curve_consistency(offsets, t)[0]
    assert v == pytest.approx(hand, abs=1e-14)
    perm = rng.permutation(7)
    assert inter_curve_consistency(offsets[perm], t[perm])[0] == pytest.approx(v, abs=1e-15)


def test_icc_adjoint_fd():
    rng = np.random.default_rng(10)
    offsets = rng.normal(size=(6, 4, 3))
    t = rng.uniform(0.1, 0.9, 6)
    _, d_off, d_t = inter_curve_consistency(offsets, t)
    num_off = fd_grad(lambda x: inter_curve_consistency(x, t)[0], offsets.copy())
    num_t = fd_grad(lambda x: inter_curve_consistency(offsets, x)[0], t.copy())
    assert np.max(np.abs(d_off - num_off)) < 1e-6
    assert np.max(np.abs(d_t - num_t)) < 1e-6


# ------------------------------------------------------ dynamic terms


def test_dynamic_rendering_examples():
    rng = np.random.default_rng(11)
    gt = rng.uniform(size=(16, 16, 3))
    m = np.zeros((16, 16))
    m[4:10, 3:12] = 1
    v = dynamic_rendering_loss(gt, m, gt * m[..., None], m.copy(), 0.2)[0]
    assert v == pytest.approx(0.0, abs=1e-12)
    z = np.zeros((16, 16))
    assert dynamic_rendering_loss(gt, z, np.zeros_like(gt), z, 0.2)[0] == pytest.approx(0.0, abs=1e-12)


def test_dynamic_rendering_penalises_off_mask_content():
    gt = np.full((16, 16, 3), 0.5)
    m = np.zeros((16, 16))
    stray = np.zeros_like(gt)
    stray[0, 0] = 1.0
    assert dynamic_rendering_loss(gt, m, stray, m, 0.2)[0] > 0


def test_dynamic_rendering_adjoint_through_renderer():
    rng = np.random.default_rng(12)
    cam = axis_camera(16, focal=14.0)
    prims = random_primitives(rng, 2, depth=(3.0, 4.0), spread=0.5)
    prims.is_dynamic[:] = True
    prims.log_scale[:] = np.log(0.4)
    sky = SkyCubemap.constant(2)
    gt = rng.uniform(size=(16, 16, 3))
    m = (rng.uniform(size=(16, 16)) < 0.4).astype(float)
    exact = RenderSettings.exact()

    def value():
        d = render(prims, cam, sky, "dynamic", exact)
        return dynamic_rendering_loss(gt, m, d.color_g, d.opacity, 0.2)[0]

    d = render(prims, cam, sky, "dynamic", exact, keep_state=True)
    _, gc, go = dynamic_rendering_loss(gt, m, d.color_g, d.opacity, 0.2)
    grads = render_adjoint(prims, cam, sky, {"color_g": gc, "opacity": go}, d, "dynamic", exact)
    h = 1e-5
    for name in ("position", "rotation", "log_scale", "opacity_logit", "sh"):
        arr = getattr(prims, name)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            fp = value()
            arr[idx] = old - h
            fm = value()
            arr[idx] = old
            num = (fp - fm) / (2 * h)
            a = grads[name][idx]
            assert abs(num - a) / (abs(num) + abs(a) + 1e-8) < 1e-4, (name, idx)


def test_velocity_examples():
    hw = (8, 10)
    m = np.zeros(hw)
    m[2:5, 3:7] = 1
    assert velocity_loss(np.zeros(hw + (3,)), m)[0] == 0.0
    inside = np.zeros(hw + (3,))
    inside[m > 0] = [1.0, 2.0, -1.0]
    assert velocity_loss(inside, m)[0] == 0.0
    v = np.array([0.3, -0.4, 1.2])
    leak = np.zeros(hw + (3,))
    outside = np.argwhere(m == 0)[:11]
    leak[outside[:, 0], outside[:, 1]] = v
    expect = np.linalg.norm(v) * math.sqrt(11) / (8 * 10)
    assert velocity_loss(leak, m)[0] == pytest.approx(expect, rel=1e-14)


def test_velocity_adjoint_fd():
    rng = np.random.default_rng(13)
    vel = rng.normal(size=(6, 6, 3))
    m = (rng.uniform(size=(6, 6)) < 0.5).astype(float)
    g = velocity_loss(vel, m)[1]
    num = fd_grad(lambda x: velocity_loss(x, m)[0], vel.copy())
    assert np.max(np.abs(g - num)) < 1e-6


# -------------------------------------------------------------- total


def perfect_setup(rng, hw=(16, 16)):
    h, w = hw
    img = rng.uniform(size=(h, w, 3))
    sky = np.zeros(hw)
    sky[:3] = 1
    dyn = np.zeros(hw)
    dyn[6:11, 4:12] = 1
    inv = rng.uniform(0.1, 0.5, hw)
    valid = rng.uniform(size=hw) < 0.1
    sup = FrameSupervision(img, inv, valid, sky, dyn)
    opacity = np.where(sky > 0, 0.0, 1.0)
    maps = RenderMaps(img.copy(), inv.copy(), opacity, np.zeros((h, w, 3)), img.copy())
    vel = np.zeros((h, w, 3))
    vel[dyn > 0] = [1.0, 0.5, 0.0]
    dmaps = RenderMaps(img * dyn[..., None], np.zeros(hw), dyn.copy(), vel, img * dyn[..., None])
    offsets = np.repeat(rng.normal(size=(4, 1, 3)), 4, axis=1)
    return maps, dmaps, sup, offsets, rng.uniform(size=4)


def test_total_zero_on_perfect_reconstruction():
    rng = np.random.default_rng(14)
    maps, dmaps, sup, off, t = perfect_setup(rng)
    assert total_loss(maps, dmaps, sup, off, t, LossWeights())[0].total == pytest.approx(0.0, abs=1e-12)
    only_r = LossWeights(0.2, 0.0, 0.0, 0.0, 0.0, 0.0)
    assert total_loss(maps, dmaps, sup, off, t, only_r)[0].total == pytest.approx(0.0, abs=1e-12)


def test_total_gradient_affine_in_weights():
    rng = np.random.default_rng(15)
    maps, dmaps, sup, off, t = perfect_setup(rng)
    maps.color = rng.uniform(size=maps.color.shape)
    maps.opacity = rng.uniform(0, 0.9, maps.opacity.shape)
    maps.depth = rng.uniform(size=maps.depth.shape)
    dmaps.color_g = rng.uniform(size=dmaps.color_g.shape)
    dmaps.opacity = rng.uniform(size=dmaps.opacity.shape)
    dmaps.velocity = rng.normal(size=dmaps.velocity.shape)
    off = rng.normal(size=off.shape)
    # lambda_r sits inside the photometric terms, so linearity holds in the
    # outer weights at a fixed lambda_r; the unweighted photometric term is
    # the constant part
    names = ("lambda_d", "lambda_o_sky", "lambda_icc", "lambda_dr", "lambda_v")
    w1 = dict(zip(names, rng.uniform(0, 0.5, 5)))
    w2 = dict(zip(names, rng.uniform(0, 0.5, 5)))
    zero = dict.fromkeys(names, 0.0)
    both = {k: w1[k] + w2[k] for k in names}

    def flat(w):
        _, cot, dcot, d_off, d_t = total_loss(maps, dmaps, sup, off, t, LossWeights(lambda_r=0.2, **w))
        return np.concatenate([*(v.ravel() for v in cot.values()), *(v.ravel() for v in dcot.values()), d_off.ravel(), d_t])

    assert np.max(np.abs(flat(both) - (flat(w1) + flat(w2) - flat(zero)))) < 1e-10


def test_total_gradient_fd_on_tiny_scene():
    from curvesplat.optim import scene_fd_check
    from curvesplat.randomscene import random_frame, random_scene, small_camera

    rng = np.random.default_rng(16)
    scene = random_scene(rng, n_static=4, per_object=3)
    frame = random_frame(rng, small_camera(16))
    rep = scene_fd_check(scene, frame, LossWeights(), per_group=8)
    assert rep.worst() < 1e-4, rep.errors


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_v=-1.0)
    with pytest.raises(ValueError):
        LossWeights(lambda_r=float("nan"))


def test_no_warning_on_normal_inputs():
    rng = np.random.default_rng(17)
    maps, dmaps, sup, off, t = perfect_setup(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        total_loss(maps, dmaps, sup, off, t, LossWeights())
