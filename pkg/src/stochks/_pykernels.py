"""Pure numpy stepping kernels; the reference for the compiled backend.

All functions act on C-contiguous float64 batches of shape (M, 2K) in place.
``status[m]`` is -1 while row m is healthy and the global step index of its
first non-finite state otherwise; failed rows are frozen.
"""
from __future__ import annotations

import math

import numpy as np

NAME = "python"


class Transform:
    def __init__(self, K: int, N: int, L: float):
        if N <= 3 * K:
            raise ValueError("collocation grid must have at least 3K+1 points")
        self.K, self.N, self.L = K, N, L
        self.h = 1.0 / math.sqrt(2.0 * L)
        self.s = math.sqrt(2.0 * L)
        self.kappa = 2.0 * math.pi / L * np.arange(1, K + 1)

    def grid(self, u: np.ndarray, derivative: bool = False) -> np.ndarray:
        X = np.zeros(u.shape[:-1] + (self.N // 2 + 1,), dtype=np.complex128)
        X[..., 1 : self.K + 1] = self.h * (u[..., 1::2] - 1j * u[..., 0::2])
        if derivative:
            X[..., 1 : self.K + 1] *= 1j * self.kappa
        return np.fft.irfft(X, n=self.N, axis=-1) * self.N

    def project(self, w: np.ndarray, K_out: int, derivative_factor: float | None = None) -> np.ndarray:
        W = np.fft.rfft(w, axis=-1)[..., 1 : K_out + 1] / self.N
        if derivative_factor is not None:
            W = W * (1j * derivative_factor * self.kappa[:K_out])
        out = np.empty(w.shape[:-1] + (2 * K_out,))
        out[..., 0::2] = -self.s * W.imag
        out[..., 1::2] = self.s * W.real
        return out

    def self_term(self, u):
        """B(u, u) = (u^2)_x / 2."""
        g = self.grid(u)
        return self.project(g * g, self.K, 0.5)

    def sym_term(self, u, U):
        """B(u, U) + B(U, u) = (u U)_x."""
        return self.project(self.grid(u) * self.grid(U), self.K, 1.0)

    def general(self, u, v, K_out):
        return self.project(self.grid(u) * self.grid(v, derivative=True), K_out)


def nonlinear(u, L, N):
    return Transform(u.shape[-1] // 2, N, L).self_term(np.asarray(u, dtype=np.float64))


def bilinear(u, v, L, N, K_out):
    return Transform(u.shape[-1] // 2, N, L).general(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64), K_out)


def _theta(s: np.ndarray, R: float):
    """Cubic smoothstep cutoff and its derivative in s = |u|^2."""
    x = np.clip(s - R, 0.0, 1.0)
    return 1.0 - x * x * (3.0 - 2.0 * x), -6.0 * x * (1.0 - x)


def _quiet(fn):
    """Overflow in a failing row is expected; it is detected and reported through ``status``."""

    def wrapper(*args):
        with np.errstate(all="ignore"):
            return fn(*args)

    wrapper.__name__, wrapper.__doc__ = fn.__name__, fn.__doc__
    return wrapper


def _check(states, status, live, step):
    bad = live & ~np.all(np.isfinite(states), axis=1)
    status[bad] = step
    return live & ~bad


@_quiet
def advance_u(u, E, Phi, noise, L, N, R, nonlinear, stride, rec, status, step0):
    """u <- E u - Phi theta(|u|^2) B(u) + noise[n] for each of noise.shape[0] steps."""
    tr = Transform(u.shape[1] // 2, N, L)
    live = status < 0
    cut = math.isfinite(R)
    for n in range(noise.shape[0]):
        new = E * u + noise[n]
        if nonlinear:
            Bu = tr.self_term(u)
            if cut:
                Bu *= _theta(np.einsum("ij,ij->i", u, u), R)[0][:, None]
            new -= Phi * Bu
        u[live] = new[live]
        live = _check(u, status, live, step0 + n + 1)
        if (n + 1) % stride == 0:
            rec[(n + 1) // stride - 1] = u


@_quiet
def advance_vz(v, z, Ev, Phiv, Ez, noise_z, a, L, N, R, nonlinear, stride, rec_v, rec_z, status, step0):
    """Shifted split: v <- Ev v + Phiv (a u - theta B(u)), z <- Ez z + noise, u = v + z."""
    tr = Transform(v.shape[1] // 2, N, L)
    live = status < 0
    cut = math.isfinite(R)
    for n in range(noise_z.shape[0]):
        u = v + z
        force = a * u
        if nonlinear:
            Bu = tr.self_term(u)
            if cut:
                Bu *= _theta(np.einsum("ij,ij->i", u, u), R)[0][:, None]
            force -= Bu
        newv = Ev * v + Phiv * force
        newz = Ez * z + noise_z[n]
        v[live] = newv[live]
        z[live] = newz[live]
        live = _check(v, status, live, step0 + n + 1)
        if (n + 1) % stride == 0:
            rec_v[(n + 1) // stride - 1] = v
            rec_z[(n + 1) // stride - 1] = z


@_quiet
def advance_tangent(u, U, E, Phi, noise, L, N, R, nonlinear, stride, rec_u, rec_U, status, step0):
    """Base trajectory together with the derivative of the discrete map in direction U."""
    tr = Transform(u.shape[1] // 2, N, L)
    live = status < 0
    cut = math.isfinite(R)
    for n in range(noise.shape[0]):
        newu = E * u + noise[n]
        newU = E * U
        if nonlinear:
            Bu = tr.self_term(u)
            sym = tr.sym_term(u, U)
            if cut:
                th, dth = _theta(np.einsum("ij,ij->i", u, u), R)
                proj = np.einsum("ij,ij->i", u, U)
                newU -= Phi * (th[:, None] * sym + (2.0 * dth * proj)[:, None] * Bu)
                Bu = th[:, None] * Bu
            else:
                newU -= Phi * sym
            newu -= Phi * Bu
        u[live] = newu[live]
        U[live] = newU[live]
        live = _check(u, status, live, step0 + n + 1)
        live = _check(U, status, live, step0 + n + 1)
        if (n + 1) % stride == 0:
            rec_u[(n + 1) // stride - 1] = u
            rec_U[(n + 1) // stride - 1] = U
