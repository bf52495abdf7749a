"""Both stepping backends against the numpy reference and against each other."""
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from stochks import _pykernels, kernels
from stochks.spectral import bilinear_B, bilinear_direct, grid_size

L = 7.0


def _setup(K=6, M=3, S=40, seed=0):
    rng = np.random.default_rng(seed)
    n = 2 * K
    E = np.exp(-0.02 * np.arange(n))
    Phi = 0.01 * np.ones(n)
    noise = 0.05 * rng.standard_normal((S, M, n))
    u0 = rng.standard_normal((M, n))
    return K, n, E, Phi, noise, u0, rng


def _run_u(mod, u0, E, Phi, noise, R=math.inf, stride=1, nonlinear=True):
    u = u0.copy()
    S, M, n = noise.shape
    rec = np.zeros((S // stride, M, n))
    st = np.full(M, -1, dtype=np.int64)
    mod.advance_u(u, E, Phi, noise, L, grid_size(n // 2), R, nonlinear, stride, rec, st, 0)
    return u, rec, st


def test_selection_and_env_override():
    assert kernels.get("python") is _pykernels
    assert kernels.active.NAME in kernels.BACKENDS
    with pytest.raises(ValueError):
        kernels.get("nonexistent")
    env = dict(os.environ, STOCHKS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from stochks import kernels; print(kernels.active.NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_nonlinear_matches_oracle(backend):
    mod = kernels.get(backend)
    rng = np.random.default_rng(1)
    for K in (1, 4, 17, 32):
        u = rng.standard_normal((5, 2 * K))
        v = rng.standard_normal((5, 2 * K))
        N = grid_size(K)
        ref = np.stack([bilinear_direct(x, x, L) for x in u])  # B(u, u) = u u_x
        assert np.allclose(mod.nonlinear(u, L, N), ref, rtol=0, atol=1e-12 * np.abs(ref).max())
        refb = np.stack([bilinear_direct(a, b, L) for a, b in zip(u, v)])
        assert np.allclose(mod.bilinear(u, v, L, N, K), refb, rtol=0, atol=1e-12 * np.abs(refb).max())
        assert np.allclose(mod.nonlinear(u[0], L, N), bilinear_B(u[0], u[0], L), atol=1e-12)


@pytest.mark.parametrize("R", [math.inf, 2.0, 30.0])
def test_backends_agree(R):
    if "compiled" not in kernels.BACKENDS:
        pytest.skip("compiled kernels not built")
    K, n, E, Phi, noise, u0, rng = _setup()
    a = _run_u(kernels.get("python"), u0, E, Phi, noise, R, stride=5)
    b = _run_u(kernels.get("compiled"), u0, E, Phi, noise, R, stride=5)
    assert np.allclose(a[1], b[1], rtol=1e-12, atol=1e-13)
    U0 = rng.standard_normal(u0.shape)
    out = []
    for name in ("python", "compiled"):
        u, U = u0.copy(), U0.copy()
        ru, rU = np.zeros((8, 3, n)), np.zeros((8, 3, n))
        st = np.full(3, -1, dtype=np.int64)
        kernels.get(name).advance_tangent(u, U, E, Phi, noise, L, grid_size(K), R, True, 5, ru, rU, st, 0)
        v, z = 0.5 * u0.copy(), 0.5 * u0.copy()
        rv, rz = np.zeros((8, 3, n)), np.zeros((8, 3, n))
        st2 = np.full(3, -1, dtype=np.int64)
        kernels.get(name).advance_vz(v, z, E, Phi, E * 0.99, noise, 0.7, L, grid_size(K), R, True, 5, rv, rz, st2, 0)
        out.append((ru, rU, rv, rz))
    for x, y in zip(*out):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-13)


def test_batched_rows_equal_single_runs(backend):
    mod = kernels.get(backend)
    K, n, E, Phi, noise, u0, _ = _setup(M=4)
    _, rec, _ = _run_u(mod, u0, E, Phi, noise, stride=4)
    for m in range(4):
        _, one, _ = _run_u(mod, u0[m : m + 1], E, Phi, np.ascontiguousarray(noise[:, m : m + 1]), stride=4)
        assert np.array_equal(one[:, 0], rec[:, m])


def test_chunked_equals_unchunked(backend):
    mod = kernels.get(backend)
    K, n, E, Phi, noise, u0, _ = _setup()
    u_full, rec, _ = _run_u(mod, u0, E, Phi, noise, stride=2)
    u = u0.copy()
    parts = []
    for lo in (0, 10, 30):
        hi = {0: 10, 10: 30, 30: 40}[lo]
        r = np.zeros(((hi - lo) // 2, 3, n))
        st = np.full(3, -1, dtype=np.int64)
        mod.advance_u(u, E, Phi, np.ascontiguousarray(noise[lo:hi]), L, grid_size(K), math.inf, True, 2, r, st, lo)
        parts.append(r)
    assert np.array_equal(np.concatenate(parts), rec)
    assert np.array_equal(u, u_full)


def test_cutoff_inactive_is_bit_identical(backend):
    mod = kernels.get(backend)
    K, n, E, Phi, noise, u0, _ = _setup()
    u0 = 0.1 * u0
    a = _run_u(mod, u0, E, Phi, 0.01 * noise, math.inf)
    b = _run_u(mod, u0, E, Phi, 0.01 * noise, 1e6)
    assert np.array_equal(a[1], b[1])


def test_cutoff_saturated_drops_nonlinearity(backend):
    mod = kernels.get(backend)
    K, n, E, Phi, noise, u0, _ = _setup(S=1)
    u0 = 10 * u0  # |u|^2 far above R + 1
    a = _run_u(mod, u0, E, Phi, noise, 1.0)
    b = _run_u(mod, u0, E, Phi, noise, nonlinear=False)
    assert np.array_equal(a[0], b[0])


def test_blow_up_is_flagged_and_row_frozen(backend):
    mod = kernels.get(backend)
    K, n, E, Phi, noise, u0, _ = _setup(S=6)
    u0[1] = 1e200
    u, rec, st = _run_u(mod, u0, E, Phi, noise)
    assert st[0] == -1 and st[2] == -1
    assert st[1] == 1
    assert np.all(np.isfinite(u[[0, 2]]))
    ok, _, st_ok = _run_u(mod, u0[[0, 2]], E, Phi, np.ascontiguousarray(noise[:, [0, 2]]))
    assert np.array_equal(ok, u[[0, 2]])
