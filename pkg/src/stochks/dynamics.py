"""Exponential-Euler integration of the stochastic KS equation and its relatives.

Three schemes share one noise source:

* ``direct-u``: u <- E u - Phi theta(|u|^2) B(u) + G X, with E, Phi built from
  the unshifted rates nu lam^2 - lam and X the exact stochastic convolution.
* ``v-plus-z``: z is the exact OU chain at rates mu = nu lam^2 - lam + a and
  v solves dv/dt + mu v = a (v + z) - theta B(v + z), so u = v + z.
* tangent: U follows the derivative of the discrete direct-u map.

Noise for trajectory m, step n and coefficient j is a pure function of
(seed, m, n, j); runs with ``substeps > 1`` aggregate finer draws exactly, so
the same Brownian path can be resolved at several step sizes.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import _expo, kernels
from .noise import NoiseOperator, NoiseStream, admissible_ipotG, standard_pairs, stochastic_increments
from .spectral import DomainSpec, bilinear_B, grid_size, shift_iso, sobolev_norm

__all__ = [
    "BlowUpError",
    "SimConfig",
    "TangentState",
    "Block",
    "Trajectory",
    "theta",
    "propagate",
    "simulate",
    "step_u",
    "step_v_plus_z",
    "cutoff_step",
    "tangent_step",
    "weak_form_residual",
    "truncation_residual",
    "continuous_dependence_run",
    "DependenceReport",
    "energy_monitor",
    "EnergyReport",
    "write_trajectory_csv",
]

SCHEMES = ("direct-u", "v-plus-z")

# elements of (steps x trajectories x coefficients) held per chunk
_CHUNK_BUDGET = 2_000_000


class BlowUpError(RuntimeError):
    """A trajectory produced a non-finite coefficient."""

    def __init__(self, step: int, trajectory: int, dt: float):
        self.step = int(step)
        self.trajectory = int(trajectory)
        self.time = self.step * dt
        super().__init__(f"trajectory {trajectory} blew up at step {step} (t={self.time:.6g})")


@dataclass(frozen=True)
class SimConfig:
    K: int = 64
    dt: float = 1e-3
    T: float = 1.0
    scheme: str = "direct-u"
    cutoff_R: float | None = None
    seed: int = 0
    record_stride: int = 1
    nonlinear: bool = True
    substeps: int = 1
    chunk_steps: int = 4096
    backend: str | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not self.T >= self.dt * (1 - 1e-12):
            raise ValueError("horizon T must be at least dt")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.cutoff_R is not None and not self.cutoff_R >= 1:
            raise ValueError("cutoff radius must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.record_stride < 1 or self.substeps < 1 or self.chunk_steps < 1:
            raise ValueError("record_stride, substeps and chunk_steps must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    @property
    def R(self) -> float:
        return math.inf if self.cutoff_R is None else float(self.cutoff_R)

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


@dataclass
class TangentState:
    """Directional derivative U of the flow together with the base state it linearizes around."""

    U: np.ndarray
    base: np.ndarray | None = None

    def __post_init__(self):
        self.U = np.array(self.U, dtype=np.float64)
        if self.base is not None:
            self.base = np.array(self.base, dtype=np.float64)


@dataclass
class Block:
    """Records produced by one chunk of steps; arrays are (records, trajectories, 2K)."""

    t: np.ndarray
    u: np.ndarray
    v: np.ndarray | None = None
    z: np.ndarray | None = None
    U: np.ndarray | None = None
    W: np.ndarray | None = None
    bel: np.ndarray | None = None
    status: np.ndarray | None = None


@dataclass
class Trajectory:
    """Full record including the initial state at index 0."""

    t: np.ndarray
    u: np.ndarray
    dt: float
    L: float
    v: np.ndarray | None = None
    z: np.ndarray | None = None
    U: np.ndarray | None = None
    W: np.ndarray | None = None
    bel: np.ndarray | None = None
    status: np.ndarray = field(default_factory=lambda: np.array([-1]))

    @property
    def y(self) -> np.ndarray:
        return self.u[0]


def theta(s, R: float):
    """Cutoff theta_R(s) and its derivative: 1 below R, 0 above R+1, cubic smoothstep between."""
    x = np.clip(np.asarray(s, dtype=np.float64) - R, 0.0, 1.0)
    return 1.0 - x * x * (3.0 - 2.0 * x), -6.0 * x * (1.0 - x)


def _as_batch(y, M: int, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != n:
        raise ValueError(f"state has {y.shape[-1]} coefficients, expected {n}")
    return np.ascontiguousarray(np.broadcast_to(y, (M, n)), dtype=np.float64).copy()


def _apply_G(G: NoiseOperator, g: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = g * x
    return shift_iso(out) if G.shift_iso else out


def _chunk_len(cfg: SimConfig, M: int, n: int, stride: int) -> int:
    S = min(cfg.chunk_steps, max(1, _CHUNK_BUDGET // (M * n)))
    return max(stride, S - S % stride)


def propagate(
    spec: DomainSpec,
    G: NoiseOperator,
    cfg: SimConfig,
    y,
    trajectories: Sequence[int] = (0,),
    h=None,
    keep_noise: bool = False,
    z0=None,
) -> Iterator[Block]:
    """Advance a batch of trajectories and yield their records chunk by chunk.

    ``y`` is one initial state or one per trajectory.  Passing a direction
    ``h`` switches on the tangent equation (direct-u only) and the running
    stochastic-integral weight ``sum <G^-1 U_n, dw_n>`` used by the gradient
    estimator; ``keep_noise`` also records the cumulative Brownian path W.
    Repeated trajectory indices share their noise.
    """
    K, n, L = cfg.K, 2 * cfg.K, spec.L
    M = len(trajectories)
    if M == 0:
        raise ValueError("need at least one trajectory")
    if G.is_power_law and not admissible_ipotG(G.gamma):
        warnings.warn(f"noise exponent gamma={G.gamma} violates the Hilbert-Schmidt condition", stacklevel=2)
    kern = kernels.get(cfg.backend)
    N = grid_size(K)
    dt, sub = cfg.dt, cfg.substeps
    g = G.amplitudes(K, L)
    rho = spec.linear_rates(K)
    stride = cfg.record_stride
    tangent = h is not None
    if tangent and cfg.scheme != "direct-u":
        raise ValueError("the tangent equation is integrated with the direct-u scheme")
    if tangent and np.any(g == 0):
        raise ValueError("the gradient weight needs every retained noise amplitude to be nonzero")

    u = _as_batch(y, M, n)
    status = np.full(M, -1, dtype=np.int64)
    W = np.zeros((M, n)) if keep_noise else None
    if cfg.scheme == "v-plus-z":
        mu = spec.linear_rates(K, include_shift=True)
        Ev, Phiv = _expo.decay(mu, dt), _expo.phi1(mu, dt)
        v = u
        z = np.zeros((M, n)) if z0 is None else _as_batch(z0, M, n)
        v -= z
    else:
        E, Phi = _expo.decay(rho, dt), _expo.phi1(rho, dt)
    if tangent:
        U = _as_batch(h, M, n)
        U_prev = U.copy()
        weight = np.zeros(M)
        # G^-1 U paired with dw equals <U, L(dw)/g> for the pairwise shift and <U, dw/g> otherwise
        ginv = 1.0 / g

    S_full = _chunk_len(cfg, M, n, stride)
    total = cfg.n_steps
    done = 0
    while done < total:
        S = min(S_full, total - done)
        xi = standard_pairs(cfg.seed, trajectories, done * sub, S * sub, n)
        if cfg.scheme == "direct-u":
            dbeta, conv = stochastic_increments(xi, rho, dt, sub)
            noise = np.ascontiguousarray(_apply_G(G, g, conv))
        else:
            dbeta, conv = stochastic_increments(xi, mu, dt, sub)
            noise = np.ascontiguousarray(_apply_G(G, g, conv))
        del xi, conv
        n_rec = S // stride
        t_rec = (done + stride * np.arange(1, n_rec + 1)) * dt
        blk = Block(t=t_rec, u=np.empty((n_rec, M, n)), status=status)

        if tangent:
            rec_u = np.empty((S, M, n))
            rec_U = np.empty((S, M, n))
            kern.advance_tangent(u, U, E, Phi, noise, L, N, cfg.R, cfg.nonlinear, 1, rec_u, rec_U, status, done)
            # left-point Ito sum: U before each step against that step's increment
            U_left = np.concatenate([U_prev[None], rec_U[:-1]])
            dw = shift_iso(dbeta) if G.shift_iso else dbeta
            steps = np.einsum("smj,smj->sm", U_left, dw * ginv)
            cum = weight + np.cumsum(steps, axis=0)
            weight = cum[-1].copy()
            U_prev = rec_U[-1].copy()
            sel = slice(stride - 1, S, stride)
            blk.u[:] = rec_u[sel]
            blk.U = rec_U[sel].copy()
            blk.bel = cum[sel].copy()
        elif cfg.scheme == "direct-u":
            kern.advance_u(u, E, Phi, noise, L, N, cfg.R, cfg.nonlinear, stride, blk.u, status, done)
        else:
            blk.v = np.empty((n_rec, M, n))
            blk.z = np.empty((n_rec, M, n))
            kern.advance_vz(v, z, Ev, Phiv, Ev, noise, spec.shift_a, L, N, cfg.R, cfg.nonlinear, stride,
                            blk.v, blk.z, status, done)
            np.add(blk.v, blk.z, out=blk.u)
        if keep_noise:
            cumW = W + np.cumsum(dbeta, axis=0)
            W = cumW[-1].copy()
            blk.W = cumW[stride - 1 :: stride].copy()
        done += S
        yield blk


def simulate(
    spec: DomainSpec,
    G: NoiseOperator,
    cfg: SimConfig,
    y,
    trajectories: Sequence[int] = (0,),
    h=None,
    keep_noise: bool = False,
    z0=None,
    raise_on_blowup: bool = True,
) -> Trajectory:
    """Collect all records of ``propagate`` into a Trajectory (initial state prepended)."""
    M, n = len(trajectories), 2 * cfg.K
    y0 = _as_batch(y, M, n)
    parts: dict[str, list] = {"t": [np.zeros(1)], "u": [y0[None]]}
    if cfg.scheme == "v-plus-z":
        z_init = np.zeros((M, n)) if z0 is None else _as_batch(z0, M, n)
        parts["v"] = [(y0 - z_init)[None]]
        parts["z"] = [z_init[None]]
    if h is not None:
        parts["U"] = [_as_batch(h, M, n)[None]]
        parts["bel"] = [np.zeros((1, M))]
    if keep_noise:
        parts["W"] = [np.zeros((1, M, n))]
    status = None
    for blk in propagate(spec, G, cfg, y, trajectories, h=h, keep_noise=keep_noise, z0=z0):
        for key, lst in parts.items():
            lst.append(getattr(blk, key))
        status = blk.status
    if raise_on_blowup and np.any(status >= 0):
        m = int(np.argmax(status >= 0))
        raise BlowUpError(int(status[m]), trajectories[m], cfg.dt)
    arrays = {k: np.concatenate(v) for k, v in parts.items()}
    return Trajectory(dt=cfg.dt, L=spec.L, status=status.copy(), **arrays)


# single-step operations --------------------------------------------------------


def _one_step_noise(G, spec, K, dt, rates, stream: NoiseStream, step: int):
    xi = stream.normals(step, 1, 2 * K)
    _, conv = stochastic_increments(xi, rates, dt)
    return np.ascontiguousarray(_apply_G(G, G.amplitudes(K, spec.L), conv)[:, None, :])


def _checked(status, step, dt, stream):
    if status[0] >= 0:
        raise BlowUpError(step + 1, stream.trajectory, dt)


def step_u(u, dt: float, spec: DomainSpec, G: NoiseOperator, stream: NoiseStream, step: int = 0,
           nonlinear: bool = True, R: float = math.inf, backend: str | None = None) -> np.ndarray:
    """One exponential-Euler step of the full equation at stream position ``step``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = _as_batch(u, 1, np.shape(u)[-1])
    K = u.shape[1] // 2
    rho = spec.linear_rates(K)
    noise = _one_step_noise(G, spec, K, dt, rho, stream, step)
    status = np.full(1, -1, dtype=np.int64)
    rec = np.empty((1, 1, 2 * K))
    kernels.get(backend).advance_u(u, _expo.decay(rho, dt), _expo.phi1(rho, dt), noise, spec.L, grid_size(K), R,
                                   nonlinear, 1, rec, status, step)
    _checked(status, step, dt, stream)
    return u[0]


def cutoff_step(u, dt: float, spec: DomainSpec, G: NoiseOperator, stream: NoiseStream, R: float, step: int = 0,
                backend: str | None = None) -> np.ndarray:
    """``step_u`` with the nonlinear term scaled by theta_R(|u|^2)."""
    if not R >= 1:
        raise ValueError("cutoff radius must be >= 1")
    return step_u(u, dt, spec, G, stream, step, True, R, backend)


def step_v_plus_z(v, z, dt: float, spec: DomainSpec, G: NoiseOperator, stream: NoiseStream, step: int = 0,
                  nonlinear: bool = True, R: float = math.inf, backend: str | None = None):
    """One step of the split scheme; returns (v', z')."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = _as_batch(v, 1, np.shape(v)[-1])
    z = _as_batch(z, 1, v.shape[1])
    K = v.shape[1] // 2
    mu = spec.linear_rates(K, include_shift=True)
    noise = _one_step_noise(G, spec, K, dt, mu, stream, step)
    Ev, Phiv = _expo.decay(mu, dt), _expo.phi1(mu, dt)
    status = np.full(1, -1, dtype=np.int64)
    rv, rz = np.empty((1, 1, 2 * K)), np.empty((1, 1, 2 * K))
    kernels.get(backend).advance_vz(v, z, Ev, Phiv, Ev, noise, spec.shift_a, spec.L, grid_size(K), R, nonlinear, 1,
                                    rv, rz, status, step)
    _checked(status, step, dt, stream)
    return v[0], z[0]


def tangent_step(state: TangentState, dt: float, spec: DomainSpec, G: NoiseOperator, stream: NoiseStream,
                 R: float = math.inf, step: int = 0, backend: str | None = None) -> TangentState:
    """Advance base state and tangent together by one step (the tangent sees no noise)."""
    if state.base is None:
        raise ValueError("tangent step needs the base trajectory state")
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = _as_batch(state.base, 1, state.base.shape[-1])
    U = _as_batch(state.U, 1, u.shape[1])
    K = u.shape[1] // 2
    rho = spec.linear_rates(K)
    noise = _one_step_noise(G, spec, K, dt, rho, stream, step)
    status = np.full(1, -1, dtype=np.int64)
    ru, rU = np.empty((1, 1, 2 * K)), np.empty((1, 1, 2 * K))
    kernels.get(backend).advance_tangent(u, U, _expo.decay(rho, dt), _expo.phi1(rho, dt), noise, spec.L,
                                         grid_size(K), R, True, 1, ru, rU, status, step)
    _checked(status, step, dt, stream)
    return TangentState(U=U[0], base=u[0])


# trajectory diagnostics ----------------------------------------------------------


def _require_unit_stride(traj: Trajectory):
    if traj.W is None:
        raise ValueError("trajectory must be recorded with keep_noise=True")
    steps = np.diff(traj.t)
    if steps.size and not np.allclose(steps, traj.dt, rtol=1e-9, atol=0):
        raise ValueError("weak-form residual needs a record at every step")


def weak_form_residual(traj: Trajectory, h, spec: DomainSpec, G: NoiseOperator, nonlinear: bool = True) -> np.ndarray:
    """Residual of the weak formulation tested against ``h`` at every record time.

    <u(t), h> - <y, h> + int <u, (nu A^2 - A) h> + int <B(u), h> - <G w(t), h>,
    with the time integrals taken by the left-point rule the scheme uses.
    Returns an array (records, trajectories); entry 0 is zero.
    """
    _require_unit_stride(traj)
    h = np.asarray(h, dtype=np.float64)
    n = traj.u.shape[-1]
    if h.shape != (n,):
        raise ValueError("test function must be a coefficient vector at the trajectory's resolution")
    rho = spec.linear_rates(n // 2)
    drift = traj.u @ (rho * h)
    if nonlinear:
        drift = drift + bilinear_B(traj.u, traj.u, spec.L) @ h
    integral = np.concatenate([np.zeros((1,) + drift.shape[1:]), np.cumsum(drift[:-1], axis=0) * traj.dt])
    GW = G.apply(traj.W, spec.L) @ h
    return (traj.u - traj.u[0]) @ h + integral - GW


def truncation_residual(traj: Trajectory, j: int, spec: DomainSpec) -> np.ndarray:
    """Weak-form residual for a basis mode e_j outside the retained range (2K < j <= 4K).

    The retained dynamics have no component along e_j, so only the time
    integral of <B(u), e_j> remains; it measures Galerkin truncation, not time error.
    """
    n = traj.u.shape[-1]
    if not n < j <= 2 * n:
        raise ValueError(f"mode {j} is not in the truncated band {n + 1}..{2 * n}")
    Bj = bilinear_B(traj.u, traj.u, spec.L, K_out=n)[..., j - 1]
    return np.concatenate([np.zeros((1,) + Bj.shape[1:]), np.cumsum(Bj[:-1], axis=0) * traj.dt])


@dataclass
class DependenceReport:
    t: np.ndarray
    difference: np.ndarray
    sup_difference: float
    initial_difference: float
    growth_rate: float
    envelope_constant: float
    identical: bool


def continuous_dependence_run(y1, y2, spec: DomainSpec, G: NoiseOperator, cfg: SimConfig, trajectory: int = 0) -> DependenceReport:
    """Run two initial states on one shared noise path and measure their separation.

    ``growth_rate`` is the least-squares slope of log|u1 - u2| in time and
    ``envelope_constant`` the smallest c with
    |U(t)|^2 <= |U(0)|^2 exp(2 c int_0^t (1 + |u1|^2 + |u2|^2)).
    """
    cfg = cfg.with_(scheme="direct-u")
    y = np.stack([np.asarray(y1, dtype=np.float64), np.asarray(y2, dtype=np.float64)])
    traj = simulate(spec, G, cfg, y, trajectories=(trajectory, trajectory))
    d = np.linalg.norm(traj.u[:, 0] - traj.u[:, 1], axis=-1)
    identical = bool(np.array_equal(traj.u[:, 0], traj.u[:, 1]))
    d0 = float(d[0])
    slope = c = 0.0
    if d0 > 0:
        pos = d > 0
        slope = float(np.polyfit(traj.t[pos], np.log(d[pos]), 1)[0]) if pos.sum() > 1 else 0.0
        energy = 1.0 + np.sum(traj.u**2, axis=(-1, -2))
        dt_rec = np.diff(traj.t, prepend=0.0)
        cum = np.cumsum(energy * dt_rec)
        ratio = np.log(np.maximum(d[1:] ** 2, 1e-300) / d0**2) / (2.0 * cum[1:])
        c = float(max(0.0, ratio.max())) if ratio.size else 0.0
    return DependenceReport(traj.t, d, float(d.max()), d0, slope, c, identical)


@dataclass
class EnergyReport:
    C1: float
    violations: list
    max_ratio: float


def energy_monitor(traj: Trajectory, spec: DomainSpec, C1: float | None = None, inflate: float = 2.0) -> EnergyReport:
    """Soft check of the energy inequality along a v-plus-z record.

    At each step d|v|^2/dt + nu |A v|^2 is compared with
    C1 (1 + |z|^2)|v|^2 + a^2 |z|^2 + C1 |z|^4.  Without a given C1 the
    constant is calibrated on the first half of the record and inflated;
    violations on the whole record are reported as (step, excess).
    """
    if traj.v is None or traj.z is None:
        raise ValueError("energy monitor needs a v-plus-z trajectory")
    v, z = traj.v[:, 0], traj.z[:, 0]
    dtr = np.diff(traj.t)
    v2 = np.sum(v**2, axis=-1)
    z2 = np.sum(z**2, axis=-1)
    Av = sobolev_norm(v, 1.0, spec.L) ** 2
    lhs = np.diff(v2) / dtr + spec.nu * Av[:-1]
    base = spec.shift_a**2 * z2[:-1]
    coef = (1.0 + z2[:-1]) * v2[:-1] + z2[:-1] ** 2
    if C1 is None:
        half = max(1, lhs.size // 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            need = np.where(coef[:half] > 0, (lhs[:half] - base[:half]) / coef[:half], 0.0)
        C1 = inflate * max(float(np.max(need)), 0.0)
    rhs = C1 * coef + base
    excess = lhs - rhs
    bad = np.nonzero(excess > 0)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, 0.0)
    return EnergyReport(C1, [(int(i) + 1, float(excess[i])) for i in bad], float(np.max(ratio)) if ratio.size else 0.0)


def write_trajectory_csv(fh, traj: Trajectory, n_modes: int = 4, member: int = 0) -> None:
    """Rows ``t, H_norm, V_halfnorm, A_norm, mode_1..mode_m`` for one trajectory of the batch."""
    u = traj.u[:, member]
    m = min(n_modes, u.shape[-1])
    cols = ["t", "H_norm", "V_halfnorm", "A_norm"] + [f"mode_{j}" for j in range(1, m + 1)]
    fh.write(",".join(cols) + "\n")
    norms = [sobolev_norm(u, a, traj.L) for a in (0.0, 0.5, 1.0)]
    for r in range(u.shape[0]):
        vals = [traj.t[r], norms[0][r], norms[1][r], norms[2][r], *u[r, :m]]
        fh.write(",".join(f"{x:.17g}" for x in vals) + "\n")
