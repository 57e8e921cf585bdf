import numpy as np
import pytest

from curvesplat.randomscene import axis_camera, random_primitives
from curvesplat.raster import (
    Camera, RenderSettings, composite_sky, project, render, render_adjoint, render_reference,
)
from curvesplat.scene import Renderables
from curvesplat.sky import SkyCubemap, sample_directions

MAPS = ("color_g", "depth", "opacity", "velocity", "color")


def single(position, opacity, color, scale=0.05, dynamic=False, velocity=(0.0, 0.0, 0.0)):
    o = float(opacity)
    return Renderables(
        position=np.array([position], float), rotation=np.array([[1.0, 0, 0, 0]]),
        log_scale=np.log(np.full((1, 3), scale)), opacity_logit=np.array([np.log(o / (1 - o))]),
        sh=np.array([[color]], float), velocity=np.array([velocity], float),
        is_dynamic=np.array([dynamic]), group=np.array([1 if dynamic else 0]),
    )


def empty_prims():
    return Renderables(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 1, 3)),
                       np.zeros((0, 3)), np.zeros(0, bool), np.zeros(0, np.int64))


def test_camera_roundtrip_and_validation():
    cam = axis_camera(16)
    back = Camera.from_dict(cam.to_dict())
    assert np.array_equal(back.rotation, cam.rotation) and back.width == 16
    assert np.allclose(cam.center, 0.0)
    with pytest.raises(ValueError):
        Camera(0.0, 1.0, 0, 0, np.eye(3), np.zeros(3), 4, 4)


def test_project_examples():
    cam = axis_camera(32)
    xi, cov, z = project(np.array([0.0, 0.0, 5.0]), np.eye(3) * 0.01, cam)
    assert np.allclose(xi, [cam.cx, cam.cy]) and z == pytest.approx(5.0)
    sigma, depth = 0.2, 4.0
    _, cov, _ = project(np.array([0.0, 0.0, depth]), np.eye(3) * sigma**2, cam)
    expect = (cam.fx * sigma / depth) ** 2 + 0.3
    assert np.allclose(np.diag(cov), expect, rtol=0.01) and abs(cov[0, 1]) < 1e-9
    assert project(np.array([0.0, 0.0, -3.0]), np.eye(3) * 0.01, cam) is None
    assert project(np.array([0.0, 0.0, 0.1]), np.eye(3) * 0.01, cam) is None
    assert project(np.array([100.0, 0.0, 2.0]), np.eye(3) * 0.01, cam) is None


def test_empty_scene_shows_sky():
    cam = axis_camera(16)
    sky = SkyCubemap(np.random.default_rng(0).uniform(0, 1, (6, 4, 4, 3)))
    for fn in (lambda: render(empty_prims(), cam, sky), lambda: render_reference(empty_prims(), cam, sky)):
        m = fn()
        assert not m.opacity.any() and not m.color_g.any()
        assert np.allclose(m.color, sample_directions(sky, cam.ray_directions()))


def test_single_gaussian_on_pixel_center():
    cam = axis_camera(16)
    # pixel (i, j) = (8, 8) has its centre at (8.5, 8.5)
    z = 5.0
    x = (8.5 - cam.cx) / cam.fx * z
    y = (8.5 - cam.cy) / cam.fy * z
    c = np.array([0.2, 0.6, 0.9])
    m = render(single([x, y, z], 0.8, c), cam, SkyCubemap.constant(2))
    assert np.allclose(m.color_g[8, 8], 0.8 * c, atol=1e-15)
    assert m.opacity[8, 8] == pytest.approx(0.8, abs=1e-15)
    assert m.depth[8, 8] == pytest.approx(0.8 / z, abs=1e-15)
    exact = render(single([x, y, z], 0.8, c), cam, SkyCubemap.constant(2), "all", RenderSettings.exact())
    ref = render_reference(single([x, y, z], 0.8, c), cam, SkyCubemap.constant(2))
    for k in MAPS:
        assert np.max(np.abs(getattr(exact, k) - getattr(ref, k))) <= 1e-12
        # thresholds only drop sub-1/255 tails
        assert np.max(np.abs(getattr(m, k) - getattr(ref, k))) <= 1e-2
    for k in ("color_g", "depth", "opacity"):
        assert np.max(np.abs(getattr(m, k)[8, 8] - getattr(ref, k)[8, 8])) <= 1e-12


def test_velocity_only_from_dynamic():
    cam = axis_camera(16)
    z = 5.0
    x = (8.5 - cam.cx) / cam.fx * z
    y = (8.5 - cam.cy) / cam.fy * z
    v = np.array([1.0, -2.0, 0.5])
    dyn = render(single([x, y, z], 0.5, [1, 1, 1], dynamic=True, velocity=v), cam, SkyCubemap.constant(2))
    assert np.allclose(dyn.velocity[8, 8], 0.5 * v)


@pytest.mark.parametrize("seed", range(3))
def test_tiled_matches_reference(seed):
    rng = np.random.default_rng(seed)
    cam = axis_camera(64)
    sky = SkyCubemap(rng.uniform(0, 1, (6, 4, 4, 3)))
    prims = random_primitives(rng, 120)
    for subset in ("all", "dynamic", "static"):
        a = render(prims, cam, sky, subset, RenderSettings.exact())
        b = render_reference(prims, cam, sky, subset)
        for k in MAPS:
            assert np.max(np.abs(getattr(a, k) - getattr(b, k))) <= 1e-6, (subset, k)


def test_thresholds_bound_divergence():
    rng = np.random.default_rng(10)
    cam = axis_camera(32)
    prims = random_primitives(rng, 60)
    a = render(prims, cam, SkyCubemap.constant(2))
    b = render_reference(prims, cam, SkyCubemap.constant(2))
    assert np.max(np.abs(a.opacity - b.opacity)) < 0.05


def test_opacity_in_unit_range_and_monotone_in_logit():
    rng = np.random.default_rng(11)
    cam = axis_camera(16)
    prims = random_primitives(rng, 30)
    prev = None
    for logit in np.linspace(-4, 4, 9):
        prims.opacity_logit[3] = logit
        o = render_reference(prims, cam, SkyCubemap.constant(2)).opacity
        assert o.min() >= 0.0 and o.max() <= 1.0
        if prev is not None:
            assert np.all(o >= prev - 1e-15)
        prev = o


def test_all_equals_static_without_dynamics():
    rng = np.random.default_rng(12)
    prims = random_primitives(rng, 40)
    prims.is_dynamic[:] = False
    cam = axis_camera(32)
    a = render(prims, cam, SkyCubemap.constant(2), "all")
    s = render(prims, cam, SkyCubemap.constant(2), "static")
    for k in ("color_g", "depth", "opacity", "velocity"):
        assert np.array_equal(getattr(a, k), getattr(s, k))


def test_thread_count_bitwise():
    rng = np.random.default_rng(13)
    prims = random_primitives(rng, 80, sh_coeffs=4)
    cam = axis_camera(48)
    sky = SkyCubemap(rng.uniform(0, 1, (6, 4, 4, 3)))
    cot = {"color": rng.normal(size=(48, 48, 3)), "depth": rng.normal(size=(48, 48)),
           "opacity": rng.normal(size=(48, 48)), "velocity": rng.normal(size=(48, 48, 3))}
    out = []
    for threads in (1, 4, 8):
        st = RenderSettings(threads=threads)
        m = render(prims, cam, sky, "all", st, keep_state=True)
        g = render_adjoint(prims, cam, sky, cot, m, "all", st)
        out.append(([getattr(m, k).tobytes() for k in MAPS], {k: v.tobytes() for k, v in g.items()}))
    assert out[0] == out[1] == out[2]


def test_composite_sky_examples():
    cam = axis_camera(8)
    shape = (8, 8)
    sky = SkyCubemap.constant(2, (0.3, 0.4, 0.5))
    cg = np.random.default_rng(0).uniform(0, 1, shape + (3,))
    assert np.array_equal(composite_sky(cg, np.ones(shape), sky, cam), cg)
    assert np.allclose(composite_sky(np.zeros(shape + (3,)), np.zeros(shape), sky, cam), [0.3, 0.4, 0.5])
    c = np.array([0.9, 0.1, 0.2])
    out = composite_sky(np.broadcast_to(0.5 * c, shape + (3,)), np.full(shape, 0.5), sky, cam)
    assert np.allclose(out, 0.5 * c + 0.5 * np.array([0.3, 0.4, 0.5]))


def test_adjoint_zero_cotangent():
    rng = np.random.default_rng(14)
    prims = random_primitives(rng, 10)
    cam = axis_camera(16)
    g = render_adjoint(prims, cam, SkyCubemap.constant(2), {})
    assert all(not np.any(v) for v in g.values())


def test_adjoint_opacity_sigmoid():
    cam = axis_camera(16)
    z = 5.0
    x = (8.5 - cam.cx) / cam.fx * z
    y = (8.5 - cam.cy) / cam.fy * z
    o = 0.7
    cot = np.zeros((16, 16))
    cot[8, 8] = 1.0
    g = render_adjoint(single([x, y, z], o, [1, 1, 1], scale=0.01), cam, SkyCubemap.constant(2), {"opacity": cot})
    assert g["opacity_logit"][0] == pytest.approx(o * (1 - o), rel=1e-12)


def test_adjoint_fd_20_gaussians():
    rng = np.random.default_rng(15)
    cam = axis_camera(16, focal=20.0)
    prims = random_primitives(rng, 20, sh_coeffs=4)
    sky = SkyCubemap(rng.uniform(0, 1, (6, 4, 4, 3)))
    cot = {"color": rng.normal(size=(16, 16, 3)), "depth": rng.normal(size=(16, 16)),
           "opacity": rng.normal(size=(16, 16)), "velocity": rng.normal(size=(16, 16, 3))}
    exact = RenderSettings.exact()

    def value():
        m = render(prims, cam, sky, "all", exact)
        return sum(float(np.sum(getattr(m, k) * v)) for k, v in cot.items())

    g = render_adjoint(prims, cam, sky, cot, settings=exact)
    h = 1e-5
    worst = 0.0
    for name in ("position", "rotation", "log_scale", "opacity_logit", "sh", "velocity"):
        arr = getattr(prims, name)
        for idx in list(np.ndindex(arr.shape))[::3]:
            old = arr[idx]
            arr[idx] = old + h
            fp = value()
            arr[idx] = old - h
            fm = value()
            arr[idx] = old
            num = (fp - fm) / (2 * h)
            worst = max(worst, abs(num - g[name][idx]) / (abs(num) + abs(g[name][idx]) + 1e-8))
    for idx in list(np.ndindex(sky.faces.shape))[::5]:
        old = sky.faces[idx]
        sky.faces[idx] = old + h
        fp = value()
        sky.faces[idx] = old - h
        fm = value()
        sky.faces[idx] = old
        num = (fp - fm) / (2 * h)
        worst = max(worst, abs(num - g["sky"][idx]) / (abs(num) + abs(g["sky"][idx]) + 1e-8))
    assert worst < 1e-4
