"""Power-law covariance operators G = L A^gamma and counter-based Wiener increments."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _expo
from .spectral import shift_iso as _shift_iso
from .spectral import wavenumber_lambdas

__all__ = [
    "NoiseOperator",
    "NoiseStream",
    "RegularityWindow",
    "admissible_ipotG",
    "admissible_ipoalfa",
    "regularity_window",
    "hs_partial_sum",
    "standard_pairs",
    "stochastic_increments",
    "sample_increment",
]

_TWO_PI = 2.0 * math.pi
_TWO_M53 = 2.0**-53


@dataclass(frozen=True)
class NoiseOperator:
    """Diagonal amplitudes g_j = lam_j^gamma, optionally followed by the pairwise shift.

    ``profile`` replaces the power law by an arbitrary function of lam_j; it is
    how the non-admissible sputtering covariance and the zero operator are built.
    """

    gamma: float = 0.5
    shift_iso: bool = False
    profile: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def uso(cls, shift_iso: bool = True) -> "NoiseOperator":
        """Amplitudes lam^(1/2) (1 + lam)^(1/2): the covariance (I + A) in the eroded-height variable."""
        return cls(gamma=0.5, shift_iso=shift_iso, profile=lambda lam: np.sqrt(lam * (1.0 + lam)))

    @classmethod
    def zero(cls) -> "NoiseOperator":
        return cls(gamma=0.0, profile=np.zeros_like)

    @property
    def is_power_law(self) -> bool:
        return self.profile is None

    def amplitudes(self, K: int, L: float) -> np.ndarray:
        lam = wavenumber_lambdas(K, L)
        if self.profile is None:
            return lam**self.gamma
        g = np.asarray(self.profile(lam), dtype=np.float64)
        if g.shape != lam.shape:
            raise ValueError("amplitude profile must return one value per coefficient")
        return g

    def apply(self, v, L: float) -> np.ndarray:
        """G v for a coefficient vector (or batch) v."""
        v = np.asarray(v, dtype=np.float64)
        out = self.amplitudes(v.shape[-1] // 2, L) * v
        return _shift_iso(out) if self.shift_iso else out

    def matrix(self, K: int, L: float) -> np.ndarray:
        """Matrix with entry [j, k] = <G e_k, e_j>."""
        return self.apply(np.eye(2 * K), L).T


def admissible_ipotG(gamma: float) -> bool:
    """A^-1 G Hilbert-Schmidt for G = L A^gamma: sum_k k^(4(gamma-1)) < inf."""
    return 4.0 * (gamma - 1.0) < -1.0


def admissible_ipoalfa(gamma: float, alpha: float) -> bool:
    """z_a continuous in D(A^alpha): sum_k k^(4(alpha+gamma-1)) < inf."""
    return 4.0 * (alpha + gamma - 1.0) < -1.0


@dataclass(frozen=True)
class RegularityWindow:
    gamma: float
    ipotG: bool
    alpha_sup: float
    space: str
    alpha_min: float | None = None

    def describe(self) -> list[str]:
        lines = [
            f"ipotG: {str(self.ipotG).lower()}",
            f"ipoalfa window: alpha < {self.alpha_sup:.17g}",
        ]
        if self.alpha_min is None:
            lines.append(f"strong Feller / irreducibility space: {self.space}")
        else:
            lines.append(
                f"strong Feller / irreducibility space: D(A^alpha) with "
                f"{self.alpha_min:.17g} <= alpha < {self.alpha_sup:.17g}"
            )
        return lines


def regularity_window(gamma: float) -> RegularityWindow:
    """Admissibility and the space in which the semigroup is irreducible and strong Feller."""
    alpha_sup = 0.75 - gamma
    ok = admissible_ipotG(gamma)
    if gamma >= -1.0:
        return RegularityWindow(gamma, ok, alpha_sup, "H")
    alpha_min = 1.0 if gamma >= -2.0 else -1.0 - gamma
    return RegularityWindow(gamma, ok, alpha_sup, "D(A^alpha)", alpha_min)


def hs_partial_sum(G: NoiseOperator, weight_alpha: float, n_pairs: int, L: float = 2 * math.pi) -> float:
    """sum_{j <= 2 n_pairs} lam_j^(2(alpha-1)) g_j^2."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    lam = wavenumber_lambdas(n_pairs, L)
    g = G.amplitudes(n_pairs, L)
    return float(np.sum(lam ** (2.0 * (weight_alpha - 1.0)) * g * g))


def _raw_lanes(seed: int, trajectories: Sequence[int], first_block: int, n_blocks: int, n_coeffs: int) -> np.ndarray:
    """Philox output for every (trajectory, coefficient) lane: uint64 array (M, n_coeffs, 4 n_blocks)."""
    raw = np.empty((len(trajectories), n_coeffs, 4 * n_blocks), dtype=np.uint64)
    bg = np.random.Philox(key=np.array([seed % 2**64, 0], dtype=np.uint64))
    state = bg.state
    buf = np.zeros(4, dtype=np.uint64)
    for m, traj in enumerate(trajectories):
        key = np.array([seed % 2**64, int(traj) % 2**64], dtype=np.uint64)
        for j in range(n_coeffs):
            # resetting the state is much cheaper than building a generator per lane
            state["state"] = {"counter": np.array([first_block, j, 0, 0], dtype=np.uint64), "key": key}
            state["buffer"] = buf
            state["buffer_pos"] = 4
            bg.state = state
            raw[m, j] = bg.random_raw(4 * n_blocks)
    return raw


def _box_muller(raw: np.ndarray) -> np.ndarray:
    """Pairs of uint64 words -> pairs of independent N(0, 1) draws (last axis of size 2)."""
    u = ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_M53
    u = u.reshape(raw.shape[:-1] + (raw.shape[-1] // 2, 2))
    r = np.sqrt(-2.0 * np.log(u[..., 0]))
    theta = _TWO_PI * u[..., 1]
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


class NoiseStream:
    """Standard normal pairs addressed by (seed, trajectory, step, coefficient).

    Every (trajectory, coefficient) owns a Philox counter lane; one 4-word block
    feeds two consecutive steps through Box-Muller.  Draws are therefore pure
    functions of their coordinates, independent of chunking or batch layout.
    """

    def __init__(self, seed: int, trajectory: int = 0):
        if seed < 0 or trajectory < 0:
            raise ValueError("seed and trajectory index must be non-negative")
        self.seed = int(seed)
        self.trajectory = int(trajectory)

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, trajectory={self.trajectory})"

    def normals(self, start: int, n_steps: int, n_coeffs: int) -> np.ndarray:
        """Array (n_steps, n_coeffs, 2) of independent N(0, 1) draws."""
        return standard_pairs(self.seed, [self.trajectory], start, n_steps, n_coeffs)[:, 0]


def standard_pairs(seed: int, trajectories: Sequence[int], start: int, n_steps: int, n_coeffs: int) -> np.ndarray:
    """Draws for several trajectories, shape (n_steps, len(trajectories), n_coeffs, 2)."""
    if seed < 0 or start < 0 or n_steps < 0:
        raise ValueError("seed and step range must be non-negative")
    first = start // 2
    n_blocks = (start + n_steps + 1) // 2 - first
    z = _box_muller(_raw_lanes(seed, trajectories, first, n_blocks, n_coeffs))
    off = start - 2 * first
    return np.ascontiguousarray(z[:, :, off : off + n_steps].transpose(2, 0, 1, 3))


def stochastic_increments(xi: np.ndarray, rates, dt: float, substeps: int = 1):
    """Brownian increments and exact convolutions over steps of size ``dt``.

    ``xi`` has shape (n_fine, ..., n_coeffs, 2) with n_fine = n * substeps.
    Returns ``(dbeta, conv)`` of shape (n, ..., n_coeffs), where conv is the
    integral of exp(-rate (dt - s)) dbeta(s) over each step.  With substeps > 1
    both are aggregated exactly from the finer draws, so runs at dt and dt/2
    sharing a fine level see the same Brownian path.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_fine = xi.shape[0]
    if n_fine % substeps:
        raise ValueError("number of fine draws must be a multiple of substeps")
    h = dt / substeps
    rates = np.asarray(rates, dtype=np.float64)
    db = math.sqrt(h) * xi[..., 0]
    conv = (_expo.phi1(rates, h) / math.sqrt(h)) * xi[..., 0] + _expo.conditional_scale(rates, h) * xi[..., 1]
    if substeps == 1:
        return db, conv
    shape = (n_fine // substeps, substeps) + xi.shape[1:-1]
    db = db.reshape(shape).sum(axis=1)
    weights = np.exp(-np.multiply.outer(h * np.arange(substeps - 1, -1, -1), rates))
    weights = weights.reshape((substeps,) + (1,) * (len(shape) - 3) + (rates.size,))
    conv = (conv.reshape(shape) * weights).sum(axis=1)
    return db, conv


def sample_increment(G: NoiseOperator, dt: float, stream: NoiseStream, K: int, L: float = 2 * math.pi, step: int = 0) -> np.ndarray:
    """G dw over one step of size dt at the given stream position."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    xi = stream.normals(step, 1, 2 * K)[0]
    return G.apply(math.sqrt(dt) * xi[:, 0], L)
