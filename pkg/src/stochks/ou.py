"""Exact transitions and closed-form moments of the shifted linear equation.

Each coefficient of z_a is a scalar Ornstein-Uhlenbeck process

    dz_j = -mu_j z_j dt + g_j dbeta_j,    mu_j = nu lam_j^2 - lam_j + a,

(before the optional pairwise shift, which only relabels the driving noise).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from . import _expo
from .noise import NoiseOperator, NoiseStream, standard_pairs, stochastic_increments
from .spectral import DomainSpec, shift_iso, wavenumber_lambdas

__all__ = ["OUModeParams", "ou_step_exact", "ou_path", "ou_ensemble", "ou_moments", "stationary_variance"]


@dataclass(frozen=True)
class OUModeParams:
    mu: np.ndarray
    g: np.ndarray
    shift_iso: bool = False

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        g = np.asarray(self.g, dtype=np.float64)
        if mu.shape != g.shape:
            raise ValueError("mu and g must have the same length")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "g", g)

    @classmethod
    def build(cls, spec: DomainSpec, G: NoiseOperator, K: int) -> "OUModeParams":
        if not spec.shift_is_stabilizing:
            raise ValueError(
                f"shift a={spec.shift_a} must exceed 1/(4 nu)={spec.shift_threshold} for the OU split"
            )
        return cls(spec.linear_rates(K, include_shift=True), G.amplitudes(K, spec.L), G.shift_iso)

    def check(self):
        if np.any(self.mu <= 0):
            raise ValueError("every decay rate mu_j must be positive")


def ou_step_exact(z, dt: float, params: OUModeParams, stream: NoiseStream, step: int = 0) -> np.ndarray:
    """Advance z by one exact Gaussian transition of length dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    params.check()
    z = np.asarray(z, dtype=np.float64)
    xi = stream.normals(step, 1, z.shape[-1])
    _, conv = stochastic_increments(xi, params.mu, dt)
    noise = params.g * conv[0]
    if params.shift_iso:
        noise = shift_iso(noise)
    return _expo.decay(params.mu, dt) * z + noise


def ou_path(z0, dt: float, n_steps: int, params: OUModeParams, stream: NoiseStream, start: int = 0) -> np.ndarray:
    """Exact chain z_0, z_1, ..., z_n at spacing dt; shape (n_steps + 1, 2K).

    Step ``i`` uses the same draws as ``ou_step_exact(..., step=start + i)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    params.check()
    z0 = np.asarray(z0, dtype=np.float64)
    xi = stream.normals(start, n_steps, z0.shape[-1])
    _, conv = stochastic_increments(xi, params.mu, dt)
    noise = params.g * conv
    if params.shift_iso:
        noise = shift_iso(noise)
    E = _expo.decay(params.mu, dt)
    out = np.empty((n_steps + 1, z0.size))
    out[0] = z0
    # z_{i+1} = E z_i + noise_i, one linear recursion per coefficient
    for j in range(z0.size):
        zi = lfilter([1.0], [1.0, -E[j]], noise[:, j], zi=[E[j] * z0[j]])[0]
        out[1:, j] = zi
    return out


def ou_ensemble(z0, dt: float, n_steps: int, params: OUModeParams, seed: int, trajectories, start: int = 0) -> np.ndarray:
    """Independent exact chains, shape (n_steps + 1, len(trajectories), 2K).

    Chain m uses the draws of ``NoiseStream(seed, trajectories[m])``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    params.check()
    trajectories = list(trajectories)
    z = np.broadcast_to(np.asarray(z0, dtype=np.float64), (len(trajectories), params.mu.size)).copy()
    xi = standard_pairs(seed, trajectories, start, n_steps, params.mu.size)
    _, conv = stochastic_increments(xi, params.mu, dt)
    noise = params.g * conv
    if params.shift_iso:
        noise = shift_iso(noise)
    E = _expo.decay(params.mu, dt)
    out = np.empty((n_steps + 1,) + z.shape)
    out[0] = z
    for i in range(n_steps):
        out[i + 1] = E * out[i] + noise[i]
    return out


def ou_moments(zeta, t: float, params: OUModeParams, weight_alpha: float = 0.0, L: float = 2 * math.pi):
    """Mean field and E|A^alpha (z(t) - E z(t))|^2 started from ``zeta``."""
    if t < 0:
        raise ValueError("time must be non-negative")
    zeta = np.asarray(zeta, dtype=np.float64)
    mean = _expo.decay(params.mu, t) * zeta
    lam = wavenumber_lambdas(zeta.shape[-1] // 2, L)
    var = params.g**2 * _expo.conv_variance(params.mu, t)
    return mean, float(np.sum(lam ** (2 * weight_alpha) * var))


def stationary_variance(j: int, params: OUModeParams) -> float:
    """g_j^2 / (2 mu_j) for the 1-based mode index j."""
    mu = params.mu[j - 1]
    if mu <= 0:
        raise ValueError("stationary variance needs mu_j > 0")
    return float(params.g[j - 1] ** 2 / (2.0 * mu))
