"""Per-mode factors of the exponential integrator and of the exact stochastic convolution."""
from __future__ import annotations

import numpy as np

# below this |rate*dt| the closed forms lose digits to cancellation
_SERIES_CUTOFF = 1e-8
_COND_CUTOFF = 1e-2


def decay(rates, dt: float) -> np.ndarray:
    return np.exp(-np.asarray(rates, dtype=np.float64) * dt)


def phi1(rates, dt: float) -> np.ndarray:
    """Integral of exp(-rate s) over [0, dt]."""
    r = np.asarray(rates, dtype=np.float64)
    x = r * dt
    small = np.abs(x) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, r)
    return np.where(small, dt * (1.0 - 0.5 * x), -np.expm1(-x) / safe)


def conv_variance(rates, dt: float) -> np.ndarray:
    """Integral of exp(-2 rate s) over [0, dt]: variance of the unit-amplitude convolution."""
    return phi1(2.0 * np.asarray(rates, dtype=np.float64), dt)


def conditional_scale(rates, dt: float) -> np.ndarray:
    """Signed std of the convolution given the Brownian increment.

    The convolution minus its regression on the increment is, to leading order,
    rate * (s - dt/2) integrated against dW, so the sign follows the rate.
    """
    r = np.asarray(rates, dtype=np.float64)
    x = r * dt
    # series of var - phi1^2/dt in x, divided by dt
    series = x**2 / 12.0 - x**3 / 12.0 + 17.0 * x**4 / 360.0 - 7.0 * x**5 / 360.0
    direct = conv_variance(r, dt) / dt - (phi1(r, dt) / dt) ** 2
    ratio = np.where(np.abs(x) < _COND_CUTOFF, series, direct)
    return np.sign(r) * np.sqrt(dt * np.maximum(ratio, 0.0))
