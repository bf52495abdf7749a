"""Long-run statistics: time averages, occupation tails, two-start comparison,
gradient estimation through the tangent process, and reachability controls."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _expo
from .dynamics import BlowUpError, SimConfig, propagate
from .noise import NoiseOperator
from .ou import OUModeParams
from .spectral import DomainSpec, bilinear_B, evaluate, sobolev_norm, wavenumber_lambdas

__all__ = [
    "Estimate",
    "MomentAccumulator",
    "make_observable",
    "kb_average",
    "occupation_tail",
    "chebyshev_bound",
    "ErgodicReport",
    "ergodic_compare",
    "bel_gradient",
    "fd_gradient",
    "ControlReport",
    "synthesize_control",
    "replay_control",
    "write_statistics_csv",
    "write_occupation_csv",
]

Observable = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Estimate:
    average: float
    stderr: float
    n: int

    def __iter__(self):
        return iter((self.average, self.stderr))


def make_observable(name: str, L: float) -> Observable:
    """Observable from its name.

    ``one``, ``H_norm2`` (|u|^2), ``V_norm2`` (|A^1/2 u|^2), ``A_norm2``,
    ``energy_<j>`` (u_j^2, 1-based) and ``point_<x>`` (u evaluated at x).
    Each maps a batch (..., 2K) to (...).
    """
    if name == "one":
        return lambda u: np.ones(u.shape[:-1])
    if name == "H_norm2":
        return lambda u: np.einsum("...j,...j->...", u, u)
    if name == "V_norm2":
        return lambda u: sobolev_norm(u, 0.5, L) ** 2
    if name == "A_norm2":
        return lambda u: sobolev_norm(u, 1.0, L) ** 2
    m = re.fullmatch(r"energy_(\d+)", name)
    if m:
        j = int(m.group(1))
        if j < 1:
            raise ValueError("mode index must be >= 1")
        return lambda u: u[..., j - 1] ** 2
    m = re.fullmatch(r"point_(.+)", name)
    if m:
        x = float(m.group(1))
        return lambda u: evaluate(u, x, L)
    raise ValueError(f"unknown observable {name!r}")


class MomentAccumulator:
    """Streaming time averages of registered observables over [burn_in, T].

    Records are equally spaced; each record after ``burn_in`` contributes one
    sample (right-point rule).  Standard errors use ``n_batches`` batch means,
    which absorbs the time correlation of the trajectory.  Several independent
    trajectories may be accumulated side by side (second array axis).
    """

    def __init__(self, observables: Mapping[str, Observable], burn_in: float = 1.0,
                 occupation: Sequence[tuple[float, float]] = (), L: float = 2 * math.pi, n_batches: int = 20):
        if burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        self.observables = dict(observables)
        self.burn_in = float(burn_in)
        self.L = L
        self.n_batches = n_batches
        self.pairs = [(float(a), float(R)) for a, R in occupation]
        self._values: dict[str, list] = {k: [] for k in self.observables}
        self._norms: dict[float, list] = {a: [] for a in {a for a, _ in self.pairs}}
        self.t_first: float | None = None
        self.t_last = 0.0
        self.n_records = 0

    @property
    def T_elapsed(self) -> float:
        return self.t_last

    def update(self, t: np.ndarray, u: np.ndarray) -> None:
        """Add records at times ``t`` with states ``u`` of shape (records, trajectories, 2K)."""
        t = np.asarray(t, dtype=np.float64)
        if t.size == 0:
            return
        self.t_last = float(t[-1])
        keep = t > self.burn_in * (1 + 1e-12)
        if not np.any(keep):
            return
        u = u[keep]
        if self.t_first is None:
            self.t_first = float(t[keep][0])
        self.n_records += u.shape[0]
        for k, f in self.observables.items():
            self._values[k].append(np.asarray(f(u), dtype=np.float64))
        for a in self._norms:
            self._norms[a].append(sobolev_norm(u, a, self.L))

    def _series(self, key) -> np.ndarray:
        return np.concatenate(self._values[key]) if self._values[key] else np.empty((0,))

    def estimate(self, key: str, member: int = 0) -> Estimate:
        if self.n_records == 0:
            raise ValueError("no records after burn-in")
        x = self._series(key)
        x = x[:, member] if x.ndim > 1 else x
        return Estimate(float(np.mean(x)), _batch_stderr(x, self.n_batches), x.size)

    def fraction(self, alpha: float, R: float, member: int = 0) -> float:
        if (float(alpha), float(R)) not in self.pairs:
            raise KeyError(f"occupation pair (alpha={alpha}, R={R}) was not registered")
        if self.n_records == 0:
            raise ValueError("no records after burn-in")
        x = np.concatenate(self._norms[float(alpha)])
        x = x[:, member] if x.ndim > 1 else x
        return float(np.mean(x > R))


def _batch_stderr(x: np.ndarray, n_batches: int) -> float:
    nb = min(n_batches, x.size)
    if nb < 2:
        return float("nan")
    size = x.size // nb
    means = x[: nb * size].reshape(nb, size).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(nb))


def _observables(names_or_map, L) -> dict[str, Observable]:
    if isinstance(names_or_map, Mapping):
        return dict(names_or_map)
    return {name: make_observable(name, L) for name in names_or_map}


def kb_average(spec: DomainSpec, G: NoiseOperator, cfg: SimConfig, y, observables, burn_in: float = 1.0,
               occupation: Sequence[tuple[float, float]] = (), trajectories: Sequence[int] = (0,)) -> MomentAccumulator:
    """Run trajectories from ``y`` to ``cfg.T`` and accumulate time averages after ``burn_in``."""
    if cfg.T <= burn_in:
        raise ValueError(f"horizon T={cfg.T} must exceed burn_in={burn_in}")
    acc = MomentAccumulator(_observables(observables, spec.L), burn_in, occupation, spec.L)
    for blk in propagate(spec, G, cfg, y, trajectories):
        acc.update(blk.t, blk.u)
        if np.any(blk.status >= 0):
            m = int(np.argmax(blk.status >= 0))
            raise BlowUpError(int(blk.status[m]), trajectories[m], cfg.dt)
    return acc


def occupation_tail(acc: MomentAccumulator, alpha: float, R: float, member: int = 0) -> float:
    """Fraction of post-burn-in records with |A^alpha u| > R."""
    return acc.fraction(alpha, R, member)


def chebyshev_bound(params: OUModeParams, alpha: float, R: float, L: float) -> float:
    """sup_t E|A^alpha z(t)|^2 / R^2 for the OU process started at zero."""
    lam = wavenumber_lambdas(params.mu.size // 2, L)
    return float(np.sum(lam ** (2 * alpha) * params.g**2 / (2 * params.mu)) / R**2)


@dataclass
class ErgodicReport:
    averages: dict[str, tuple[Estimate, Estimate]]
    discrepancy: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(d <= self.tolerance for d in self.discrepancy.values())


def ergodic_compare(spec: DomainSpec, G: NoiseOperator, cfg: SimConfig, y1, y2, observables=("H_norm2",),
                    burn_in: float = 1.0, tolerance: float = 0.05, streams: tuple[int, int] = (0, 1)) -> ErgodicReport:
    """Long-run averages from two initial states; relative discrepancy per observable.

    The two runs use trajectory indices ``streams`` (independent noise by default).
    """
    y = np.stack([np.asarray(y1, dtype=np.float64), np.asarray(y2, dtype=np.float64)])
    acc = kb_average(spec, G, cfg, y, observables, burn_in, trajectories=streams)
    out, disc = {}, {}
    for k in acc.observables:
        e1, e2 = acc.estimate(k, 0), acc.estimate(k, 1)
        out[k] = (e1, e2)
        scale = 0.5 * (abs(e1.average) + abs(e2.average))
        disc[k] = 0.0 if e1.average == e2.average else abs(e1.average - e2.average) / scale
    return ErgodicReport(out, disc, tolerance)


def _phi_values(phi, u):
    return np.asarray(phi(u), dtype=np.float64)


def bel_gradient(spec: DomainSpec, G: NoiseOperator, cfg: SimConfig, y, h, phi: Observable, t: float,
                 n_samples: int, batch: int = 1000, first_trajectory: int = 0) -> Estimate:
    """Directional derivative of y -> E phi(u(t; y)) along h by the tangent-weight formula.

    Each sample is phi(u(t)) (1/t) sum_n <G^-1 U_n, dw_n>, with the weight built
    from the same increments that drive the path.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    run = cfg.with_(T=t, scheme="direct-u")
    run = run.with_(record_stride=run.n_steps)
    samples = []
    for lo in range(0, n_samples, batch):
        trajs = range(first_trajectory + lo, first_trajectory + min(n_samples, lo + batch))
        for blk in propagate(spec, G, run, y, trajs, h=h):
            if blk.t.size:
                uT, wT = blk.u[-1], blk.bel[-1]
        samples.append(_phi_values(phi, uT) * wT / (run.n_steps * run.dt))
    s = np.concatenate(samples)
    return Estimate(float(np.mean(s)), float(np.std(s, ddof=1) / math.sqrt(s.size)), s.size)


def fd_gradient(spec: DomainSpec, G: NoiseOperator, cfg: SimConfig, y, h, phi: Observable, t: float,
                n_samples: int, eps: float = 1e-3, batch: int = 1000, first_trajectory: int = 0) -> Estimate:
    """Central finite difference (P phi(y + eps h) - P phi(y - eps h)) / (2 eps) with common random numbers."""
    if t <= 0:
        raise ValueError("t must be positive")
    run = cfg.with_(T=t, scheme="direct-u")
    run = run.with_(record_stride=run.n_steps)
    y = np.asarray(y, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    samples = []
    for lo in range(0, n_samples, batch):
        trajs = list(range(first_trajectory + lo, first_trajectory + min(n_samples, lo + batch)))
        ends = []
        for start in (y + eps * h, y - eps * h):
            for blk in propagate(spec, G, run, start, trajs):
                if blk.t.size:
                    uT = blk.u[-1]
            ends.append(_phi_values(phi, uT))
        samples.append((ends[0] - ends[1]) / (2 * eps))
    s = np.concatenate(samples)
    return Estimate(float(np.mean(s)), float(np.std(s, ddof=1) / math.sqrt(s.size)), s.size)


@dataclass
class ControlReport:
    t: np.ndarray
    u_bar: np.ndarray
    v_bar: np.ndarray
    z_bar: np.ndarray
    endpoint: np.ndarray
    target: np.ndarray
    endpoint_error: float
    relative_error: float = field(default=0.0)


def _vbar_step(spec, K, dt):
    mu = spec.linear_rates(K, include_shift=True)
    return _expo.decay(mu, dt), _expo.phi1(mu, dt)


def synthesize_control(y, u_target, t: float, spec: DomainSpec, K: int, dt: float = 1e-4) -> ControlReport:
    """Noise path z_bar that steers the shifted equation from y to u_target in time t.

    With the straight path u_bar(s) = y + (s/t)(u_target - y), v_bar solves
    dv/ds + (nu A^2 - A + a) v = a u_bar - B(u_bar), v(0) = y, and
    z_bar = u_bar - v_bar.  The report includes a replay of the shifted
    equation driven by z_bar at the same step.
    """
    if t <= 0:
        raise ValueError("control horizon t must be positive")
    y = np.asarray(y, dtype=np.float64)
    u_target = np.asarray(u_target, dtype=np.float64)
    if y.shape != (2 * K,) or u_target.shape != (2 * K,):
        raise ValueError("y and target must have 2K coefficients")
    n = max(1, int(round(t / dt)))
    dt = t / n
    s = np.linspace(0.0, t, n + 1)
    u_bar = y + np.outer(s / t, u_target - y)
    force = spec.shift_a * u_bar - bilinear_B(u_bar, u_bar, spec.L)
    E, Phi = _vbar_step(spec, K, dt)
    v_bar = np.empty_like(u_bar)
    v_bar[0] = y
    for i in range(n):
        v_bar[i + 1] = E * v_bar[i] + Phi * force[i]
    z_bar = u_bar - v_bar
    z_bar[0] = 0.0
    end = replay_control(s, z_bar, y, spec, dt)
    err = float(np.linalg.norm(end - u_target))
    scale = float(np.linalg.norm(u_target))
    return ControlReport(s, u_bar, v_bar, z_bar, end, u_target, err, err / scale if scale > 0 else err)


def replay_control(s: np.ndarray, z_bar: np.ndarray, y, spec: DomainSpec, dt: float) -> np.ndarray:
    """Endpoint u(t) = v(t) + z_bar(t) of the shifted equation driven by a given z_bar path.

    The replay step may differ from the grid ``s`` of the path; z_bar is then
    interpolated linearly in time.
    """
    s = np.asarray(s, dtype=np.float64)
    t = float(s[-1])
    n = max(1, int(round(t / dt)))
    dt = t / n
    times = np.linspace(0.0, t, n + 1)
    if times.size == s.size and np.allclose(times, s, rtol=0, atol=1e-12 * t):
        z = z_bar
    else:
        z = np.stack([np.interp(times, s, z_bar[:, j]) for j in range(z_bar.shape[1])], axis=1)
    K = z.shape[1] // 2
    E, Phi = _vbar_step(spec, K, dt)
    v = np.asarray(y, dtype=np.float64) - z[0]
    for i in range(n):
        u = v + z[i]
        v = E * v + Phi * (spec.shift_a * u - bilinear_B(u, u, spec.L))
    return v + z[-1]


def write_statistics_csv(fh, acc: MomentAccumulator, member: int = 0) -> None:
    fh.write("observable,T,average,stderr,n_records\n")
    for k in acc.observables:
        e = acc.estimate(k, member)
        fh.write(f"{k},{acc.T_elapsed:.17g},{e.average:.17g},{e.stderr:.17g},{e.n}\n")


def write_occupation_csv(fh, acc: MomentAccumulator, member: int = 0) -> None:
    fh.write("alpha,R,fraction,T\n")
    for a, R in acc.pairs:
        fh.write(f"{a:.17g},{R:.17g},{acc.fraction(a, R, member):.17g},{acc.T_elapsed:.17g}\n")
