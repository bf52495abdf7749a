"""Zero-mean periodic fields on the real sine/cosine eigenbasis of A = -d^2/dx^2.

Coefficient vectors have length 2K.  Index ``2(k-1)`` holds the coefficient of
``sqrt(2/L) sin(2 pi k x / L)`` and index ``2k-1`` the coefficient of
``sqrt(2/L) cos(2 pi k x / L)``, so the vector ``c`` at 0-based position
``j-1`` is the coefficient u_j of the relabelled basis function e_j.
Everything here accepts arrays with arbitrary leading (batch) axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import next_fast_len

__all__ = [
    "DomainSpec",
    "SpectralField",
    "WavenumberTable",
    "eigenvalue",
    "wavenumber_lambdas",
    "apply_power",
    "sobolev_norm",
    "grid_size",
    "to_grid",
    "evaluate",
    "bilinear_B",
    "bilinear_direct",
    "trilinear_b",
    "semigroup_factor",
    "smoothing_constant",
    "shift_iso",
    "write_snapshot",
    "read_snapshot",
]

SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class DomainSpec:
    """Period ``L``, viscosity ``nu`` and stabilization shift ``shift_a``.

    ``shift_a`` defaults to ``1/(2 nu)``.
    """

    L: float = 2 * math.pi
    nu: float = 1.0
    shift_a: float | None = None

    def __post_init__(self):
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError(f"period L must be positive, got {self.L}")
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ValueError(f"viscosity nu must be positive, got {self.nu}")
        if self.shift_a is None:
            object.__setattr__(self, "shift_a", 1.0 / (2.0 * self.nu))
        if self.shift_a < 0:
            raise ValueError(f"shift a must be >= 0, got {self.shift_a}")

    @property
    def shift_threshold(self) -> float:
        return 1.0 / (4.0 * self.nu)

    @property
    def shift_is_stabilizing(self) -> bool:
        """True when nu*lam^2 - lam + a > 0 for every lam > 0."""
        return self.shift_a > self.shift_threshold

    def lambdas(self, K: int) -> np.ndarray:
        return wavenumber_lambdas(K, self.L)

    def linear_rates(self, K: int, include_shift: bool = False) -> np.ndarray:
        """Per-coefficient decay rates nu*lam^2 - lam (+ a)."""
        lam = self.lambdas(K)
        rates = self.nu * lam**2 - lam
        if include_shift:
            rates = rates + self.shift_a
        return rates


@dataclass(frozen=True)
class WavenumberTable:
    lambdas: np.ndarray
    sqrt_lambdas: np.ndarray

    @classmethod
    def build(cls, K: int, L: float) -> "WavenumberTable":
        lam = wavenumber_lambdas(K, L)
        return cls(lam, np.sqrt(lam))


@dataclass(frozen=True)
class SpectralField:
    """An immutable coefficient vector with 2K entries."""

    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim != 1 or c.size == 0 or c.size % 2:
            raise ValueError("coefficient vector must be 1-D with even, positive length")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficient vector contains non-finite entries")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self) -> int:
        return self.coeffs.size // 2

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.coeffs
        return self.coeffs.astype(dtype)

    def __len__(self):
        return self.coeffs.size

    @classmethod
    def zeros(cls, K: int) -> "SpectralField":
        return cls(np.zeros(2 * K))

    @classmethod
    def unit(cls, K: int, j: int) -> "SpectralField":
        """Basis vector e_j (1-based, relabelled numbering)."""
        if not 1 <= j <= 2 * K:
            raise IndexError(f"mode {j} outside 1..{2 * K}")
        c = np.zeros(2 * K)
        c[j - 1] = 1.0
        return cls(c)

    @classmethod
    def random(cls, K: int, rng: np.random.Generator, norm: float = 1.0) -> "SpectralField":
        c = rng.standard_normal(2 * K)
        return cls(c * (norm / np.linalg.norm(c)))

    def norm(self, alpha: float = 0.0, L: float = 2 * math.pi) -> float:
        return float(sobolev_norm(self.coeffs, alpha, L))


def eigenvalue(k: int, L: float) -> float:
    """Eigenvalue 4 pi^2 k^2 / L^2 of A for wavenumber index k >= 1."""
    if k < 1:
        raise ValueError("wavenumber index must be >= 1 (the constant mode is not in H)")
    if L <= 0:
        raise ValueError(f"period L must be positive, got {L}")
    return 4.0 * math.pi**2 * k**2 / L**2


def wavenumber_lambdas(K: int, L: float) -> np.ndarray:
    if K < 1:
        raise ValueError("K must be >= 1")
    k = np.repeat(np.arange(1, K + 1, dtype=np.float64), 2)
    return 4.0 * math.pi**2 * k**2 / L**2


def _n_pairs(u: np.ndarray) -> int:
    n = u.shape[-1]
    if n % 2:
        raise ValueError(f"coefficient axis must have even length, got {n}")
    return n // 2


def apply_power(u, alpha: float, L: float = 2 * math.pi) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if alpha == 0:
        return u.copy()
    return wavenumber_lambdas(_n_pairs(u), L) ** alpha * u


def sobolev_norm(u, alpha: float, L: float = 2 * math.pi):
    """|A^alpha u| = sqrt(sum_j lam_j^(2 alpha) u_j^2), reduced over the last axis."""
    u = np.asarray(u, dtype=np.float64)
    w = wavenumber_lambdas(_n_pairs(u), L) ** (2 * alpha)
    return np.sqrt(np.sum(w * u * u, axis=-1))


def grid_size(K: int) -> int:
    """Collocation points for an alias-free quadratic product of K-pair fields."""
    return next_fast_len(3 * K + 1, real=True)


def _half_spectrum(u: np.ndarray, L: float, N: int, derivative: bool = False) -> np.ndarray:
    K = _n_pairs(u)
    X = np.zeros(u.shape[:-1] + (N // 2 + 1,), dtype=np.complex128)
    h = 1.0 / math.sqrt(2.0 * L)
    X[..., 1 : K + 1] = h * (u[..., 1::2] - 1j * u[..., 0::2])
    if derivative:
        X[..., 1 : K + 1] *= 1j * (2 * math.pi / L) * np.arange(1, K + 1)
    return X


def to_grid(u, L: float = 2 * math.pi, N: int | None = None, derivative: bool = False) -> np.ndarray:
    """Values of u (or u_x) at x_m = m L / N, m = 0..N-1."""
    u = np.asarray(u, dtype=np.float64)
    if N is None:
        N = grid_size(_n_pairs(u))
    if N <= 2 * _n_pairs(u):
        raise ValueError("grid too coarse for the field")
    return np.fft.irfft(_half_spectrum(u, L, N, derivative), n=N, axis=-1) * N


def _from_grid(w: np.ndarray, L: float, K_out: int) -> np.ndarray:
    N = w.shape[-1]
    W = np.fft.rfft(w, axis=-1)[..., 1 : K_out + 1] / N
    out = np.empty(w.shape[:-1] + (2 * K_out,))
    s = math.sqrt(2.0 * L)
    out[..., 0::2] = -s * W.imag
    out[..., 1::2] = s * W.real
    return out


def evaluate(u, x, L: float = 2 * math.pi):
    """Point values of the field at positions ``x`` (any real numbers)."""
    u = np.asarray(u, dtype=np.float64)
    K = _n_pairs(u)
    x = np.asarray(x, dtype=np.float64)
    kx = np.multiply.outer(x, 2 * math.pi * np.arange(1, K + 1) / L)
    basis = np.empty(kx.shape[:-1] + (2 * K,))
    basis[..., 0::2] = np.sin(kx)
    basis[..., 1::2] = np.cos(kx)
    return math.sqrt(2.0 / L) * np.tensordot(u, basis, axes=([-1], [-1]))


def bilinear_B(u, v, L: float = 2 * math.pi, K_out: int | None = None) -> np.ndarray:
    """Projection of u v_x onto the first ``K_out`` pairs, evaluated alias-free."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"resolution mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    K = _n_pairs(u)
    if K_out is None:
        K_out = K
    if not 1 <= K_out <= 2 * K:
        raise ValueError(f"K_out must lie in 1..{2 * K}")
    # the product holds wavenumbers up to 2K; aliasing reaches down to N - 2K
    N = next_fast_len(max(3 * K + 1, 2 * K + K_out + 1), real=True)
    w = to_grid(u, L, N) * to_grid(v, L, N, derivative=True)
    return _from_grid(w, L, K_out)


def _complex_coeffs(u: np.ndarray) -> np.ndarray:
    """Fourier coefficients on wavenumbers -K..K (index k + K)."""
    K = _n_pairs(u)
    c = np.zeros(u.shape[:-1] + (2 * K + 1,), dtype=np.complex128)
    pos = (u[..., 1::2] - 1j * u[..., 0::2]) / 2.0
    c[..., K + 1 :] = pos
    c[..., :K] = np.conj(pos[..., ::-1])
    return c


def bilinear_direct(u, v, L: float = 2 * math.pi, K_out: int | None = None) -> np.ndarray:
    """O(K^2) coefficient-space convolution; reference for :func:`bilinear_B`."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError("bilinear_direct takes two 1-D fields of equal resolution")
    K = _n_pairs(u)
    K_out = K if K_out is None else K_out
    kappa = 2 * math.pi / L * np.arange(-K, K + 1)
    # basis functions carry sqrt(2/L); the product carries it twice
    prod = np.convolve(_complex_coeffs(u), 1j * kappa * _complex_coeffs(v)) * math.sqrt(2.0 / L)
    # prod index i corresponds to wavenumber i - 2K
    pos = prod[2 * K + 1 : 2 * K + 1 + K_out]
    pos = np.concatenate([pos, np.zeros(K_out - pos.size)]) if pos.size < K_out else pos
    out = np.empty(2 * K_out)
    out[0::2] = -2.0 * pos.imag
    out[1::2] = 2.0 * pos.real
    return out


def trilinear_b(u, v, w, L: float = 2 * math.pi):
    """b(u, v, w) = integral of u v_x w over one period."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != np.shape(u)[-1]:
        raise ValueError("resolution mismatch")
    return np.sum(bilinear_B(u, v, L) * w, axis=-1)


def semigroup_factor(j: int, t: float, spec: DomainSpec, include_shift: bool = False) -> float:
    """exp(-(nu lam_j^2 - lam_j [+ a]) t) for the 1-based mode index j."""
    if t < 0:
        raise ValueError("time must be non-negative")
    lam = eigenvalue((j + 1) // 2, spec.L)
    rate = spec.nu * lam**2 - lam + (spec.shift_a if include_shift else 0.0)
    return math.exp(-rate * t)


def smoothing_constant(beta: float) -> float:
    """Optimal M_beta with lam^(2 beta) exp(-lam^2 t) <= M_beta / t^beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return (beta / math.e) ** beta


def shift_iso(u) -> np.ndarray:
    """Pairwise isomorphism L e_j = (-1)^j e_{j + (-1)^(j+1)}: sine <- cosine, cosine <- -sine."""
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)
    out[..., 0::2] = u[..., 1::2]
    out[..., 1::2] = -u[..., 0::2]
    return out


def write_snapshot(path, u, L: float, extra=None) -> None:
    """Text snapshot; ``extra`` adds ``# key=value`` comment lines after the fixed header."""
    c = np.asarray(u, dtype=np.float64)
    K = _n_pairs(c)
    lines = [f"# L={L!r}", f"# K={K}", f"# version={SNAPSHOT_VERSION}"]
    for key, val in (extra or {}).items():
        if key in ("L", "K", "version"):
            raise ValueError(f"header key {key!r} is reserved")
        lines.append(f"# {key}={val}")
    lines += [f"{j},{x:.17g}" for j, x in enumerate(c, start=1)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path) -> tuple[SpectralField, float]:
    header: dict[str, str] = {}
    values: dict[int, float] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, val = line[1:].strip().partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: malformed header line")
            header[key.strip()] = val.strip()
            continue
        idx, sep, val = line.partition(",")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'j,value'")
        values[int(idx)] = float(val)
    if header.get("version") != str(SNAPSHOT_VERSION):
        raise ValueError(f"{path}: unsupported snapshot version {header.get('version')!r}")
    K = int(header["K"])
    if sorted(values) != list(range(1, 2 * K + 1)):
        raise ValueError(f"{path}: expected coefficients 1..{2 * K}")
    return SpectralField(np.array([values[j] for j in range(1, 2 * K + 1)])), float(header["L"])
