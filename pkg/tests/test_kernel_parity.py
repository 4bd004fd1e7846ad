"""The numba and numpy batch backends must agree operation by operation."""

import os
import subprocess
import sys

import numpy as np
import pytest

numba = pytest.importorskip("numba")

from flipfree.kernels import batch_numba, batch_numpy  # noqa: E402


def _batch(rng, m, d, scale=1.0):
    return rng.normal(size=(m, d, d)) * scale


@pytest.mark.parametrize("d", [2, 3])
def test_polar_init_parity(d):
    rng = np.random.default_rng(21)
    j = _batch(rng, 400, d)
    u0, p0 = batch_numba.polar_init(j, 1e-4)
    u1, p1 = batch_numpy.polar_init(j, 1e-4)
    np.testing.assert_allclose(u0, u1, atol=1e-9)
    np.testing.assert_allclose(p0, p1, atol=1e-9)


@pytest.mark.parametrize("d", [2, 3])
def test_u_step_parity(d):
    rng = np.random.default_rng(22)
    m = 400
    j = _batch(rng, m, d)
    lam = _batch(rng, m, d, 0.1)
    u_prev, p = batch_numba.polar_init(j, 1e-4)
    mu = 10 ** rng.uniform(-1, 1, m)
    h = np.abs(rng.normal(size=m))
    un0 = batch_numba.u_step(j, lam, p, u_prev, mu, h)
    un1 = batch_numpy.u_step(j, lam, p, u_prev, mu, h)
    np.testing.assert_allclose(un0, un1, atol=1e-8)


def test_u_step_zero_q_uses_previous_rotation():
    # J + Lam = 0 and h = 0 makes the fitting target vanish entirely
    th = 0.7
    u_prev = np.array([[[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]])
    j = np.ones((1, 2, 2))
    lam = -j
    p = np.eye(2)[None]
    mu = np.ones(1)
    h = np.zeros(1)
    for mod in (batch_numba, batch_numpy):
        un = mod.u_step(j, lam, p, u_prev, mu, h)
        np.testing.assert_allclose(un, u_prev, atol=1e-15)


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("kind", [0, 1])
def test_p_step_parity(kind, d):
    rng = np.random.default_rng(23)
    m = 400
    j = _batch(rng, m, d)
    lam = _batch(rng, m, d, 0.1)
    u, _ = batch_numba.polar_init(j, 1e-4)
    w = 10 ** rng.uniform(-2, 2, m)
    mu = 10 ** rng.uniform(-2, 2, m)
    pn0 = batch_numba.p_step(kind, j, lam, u, w, mu)
    pn1 = batch_numpy.p_step(kind, j, lam, u, w, mu)
    np.testing.assert_allclose(pn0, pn1, atol=2e-8)


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("kind", [0, 1])
def test_grad_norms_and_f_spd_parity(kind, d):
    rng = np.random.default_rng(24)
    m = 300
    j = _batch(rng, m, d)
    _, p = batch_numba.polar_init(j, 1e-2)
    g0 = batch_numba.grad_norms(kind, p)
    g1 = batch_numpy.grad_norms(kind, p)
    np.testing.assert_allclose(g0, g1, rtol=1e-6, atol=1e-9)
    f0 = batch_numba.f_spd(kind, p)
    f1 = batch_numpy.f_spd(kind, p)
    np.testing.assert_allclose(f0, f1, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("kind", [0, 1, 2])
def test_energy_density_parity(kind, d):
    rng = np.random.default_rng(25)
    j = _batch(rng, 500, d)
    v0, fl0 = batch_numba.energy_density(kind, j)
    v1, fl1 = batch_numpy.energy_density(kind, j)
    assert np.array_equal(fl0, fl1)
    np.testing.assert_allclose(v0, v1, rtol=1e-8, atol=1e-10)


def test_flip_flags_exact_on_constructed_batch():
    j = np.stack(
        [np.eye(2), np.diag([1.0, -1.0]), np.diag([0.0, 1.0]), 2 * np.eye(2)]
    )
    for mod in (batch_numba, batch_numpy):
        _, fl = mod.energy_density(0, j)
        assert fl.tolist() == [False, True, True, False]


def test_env_flag_selects_numpy_backend():
    code = (
        "import flipfree.kernels as k; "
        "assert k.ACTIVE_BACKEND == 'numpy', k.ACTIVE_BACKEND; "
        "assert not k.NUMBA_AVAILABLE"
    )
    env = dict(os.environ, FLIPFREE_KERNELS="numpy")
    subprocess.run([sys.executable, "-c", code], check=True, env=env)


def test_env_flag_rejects_unknown_value():
    env = dict(os.environ, FLIPFREE_KERNELS="cuda")
    proc = subprocess.run(
        [sys.executable, "-c", "import flipfree.kernels"],
        capture_output=True,
        env=env,
        text=True,
    )
    assert proc.returncode != 0
    assert "FLIPFREE_KERNELS" in proc.stderr
