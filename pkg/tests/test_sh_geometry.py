import numpy as np
import pytest

from curvesplat.geometry import (
    covariance_3d, covariance_3d_adjoint, normalize_quat, normalize_quat_adjoint, quat_multiply,
    quat_multiply_adjoint, quat_to_rotmat, yaw_quat,
)
from curvesplat.sh import degree_of, eval_sh, eval_sh_adjoint, num_coeffs, sh_basis


def fd(f, x, h=1e-6):
    g = np.zeros(np.shape(f(x)) + x.shape)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[(...,) + idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_coeff_counts():
    assert [num_coeffs(d) for d in range(4)] == [1, 4, 9, 16]
    assert degree_of(9) == 2
    with pytest.raises(ValueError):
        num_coeffs(4)
    with pytest.raises(ValueError):
        degree_of(5)


def test_degree_zero_is_plain_rgb():
    rng = np.random.default_rng(0)
    c = rng.uniform(size=(5, 1, 3))
    col, _ = eval_sh(c, rng.normal(size=(5, 3)), np.zeros(3))
    assert np.array_equal(col, c[:, 0])


def test_higher_bands_average_out_over_sphere():
    # every non-constant real SH integrates to zero over the sphere
    rng = np.random.default_rng(1)
    d = rng.normal(size=(200000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    val, _ = sh_basis(3, d)
    assert np.all(np.abs(val[:, 1:].mean(axis=0)) < 0.01)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_sh_jacobian_fd(degree):
    d = np.array([0.3, -0.5, 0.81])
    _, jac = sh_basis(degree, d)
    num = fd(lambda x: sh_basis(degree, x)[0], d)
    assert np.allclose(jac, num, atol=1e-8)


def test_sh_adjoint_fd():
    rng = np.random.default_rng(2)
    coeffs = rng.normal(size=(3, 16, 3))
    pos = rng.normal(size=(3, 3)) + [0, 0, 4]
    cam = np.array([0.2, -0.1, 0.0])
    cot = rng.normal(size=(3, 3))
    _, cache = eval_sh(coeffs, pos, cam)
    d_c, d_p = eval_sh_adjoint(coeffs, cache, cot)
    num_c = fd(lambda c: np.sum(eval_sh(c, pos, cam)[0] * cot), coeffs)
    num_p = fd(lambda p: np.sum(eval_sh(coeffs, p, cam)[0] * cot), pos)
    assert np.allclose(d_c, num_c, atol=1e-7) and np.allclose(d_p, num_p, atol=1e-7)


def test_rotation_matrices():
    rng = np.random.default_rng(3)
    a, b = normalize_quat(rng.normal(size=(4, 4))), normalize_quat(rng.normal(size=(4, 4)))
    ra, rb = quat_to_rotmat(a), quat_to_rotmat(b)
    assert np.allclose(ra @ np.swapaxes(ra, 1, 2), np.eye(3), atol=1e-14)
    assert np.allclose(np.linalg.det(ra), 1.0)
    assert np.allclose(quat_to_rotmat(quat_multiply(a, b)), ra @ rb, atol=1e-14)
    assert np.allclose(quat_to_rotmat(yaw_quat(np.pi / 2)) @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_quaternion_adjoints_fd():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=4), rng.normal(size=4)
    cot = rng.normal(size=4)
    da, db = quat_multiply_adjoint(a[None], b[None], cot[None])
    assert np.allclose(da[0], fd(lambda x: quat_multiply(x, b) @ cot, a), atol=1e-8)
    assert np.allclose(db[0], fd(lambda x: quat_multiply(a, x) @ cot, b), atol=1e-8)
    dn = normalize_quat_adjoint(a, cot)
    assert np.allclose(dn, fd(lambda x: normalize_quat(x) @ cot, a), atol=1e-8)


def test_covariance_and_adjoint():
    rng = np.random.default_rng(5)
    q = normalize_quat(rng.normal(size=4))
    s = rng.uniform(0.1, 1.0, 3)
    cov = covariance_3d(q, s)
    assert np.allclose(cov, cov.T) and np.allclose(np.sort(np.linalg.eigvalsh(cov)), np.sort(s**2))
    cot = rng.normal(size=(3, 3))
    dq, ds = covariance_3d_adjoint(q[None], s[None], cot[None])
    assert np.allclose(dq[0], fd(lambda x: np.sum(covariance_3d(x, s) * cot), q), atol=1e-7)
    assert np.allclose(ds[0], fd(lambda x: np.sum(covariance_3d(q, x) * cot), s), atol=1e-7)
