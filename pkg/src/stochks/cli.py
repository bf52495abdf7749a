"""Command-line front end.

Usage::

    stochks check --gamma 0.5
    stochks simulate --config run.cfg --out traj.csv
    stochks invariant --T 500 --L 50 --out stats.csv

A config file holds flat ``key = value`` lines (``#`` starts a comment);
command-line flags override it.  Every output starts with ``# key=value``
lines echoing the resolved configuration.
"""
from __future__ import annotations

import argparse
import io
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .dynamics import BlowUpError, SimConfig, simulate, write_trajectory_csv
from .ergodic import (
    Estimate,
    bel_gradient,
    fd_gradient,
    kb_average,
    make_observable,
    synthesize_control,
    write_occupation_csv,
    write_statistics_csv,
)
from .noise import NoiseOperator, admissible_ipotG, regularity_window
from .spectral import DomainSpec, SpectralField, write_snapshot

COMMANDS = ("check", "simulate", "invariant", "mixing", "gradient", "control")

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_ADMISSIBILITY = 0, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(frozen=True)
class RunConfig:
    command: str = "check"
    out: str = "-"
    seed: int = 0
    modes: int = 64
    dt: float = 1e-3
    T: float = 10.0
    L: float = 2 * math.pi
    nu: float = 1.0
    gamma: float = 0.5
    shift_iso: bool = False
    shift_a: float | None = None
    cutoff_R: float | None = None
    burn_in: float = 1.0
    workers: int = 1
    scheme: str = "direct-u"
    record_stride: int = 10
    nonlinear: bool = True
    trajectories: int = 1
    observables: str = "H_norm2,V_norm2,energy_1"
    occupation: str = ""
    csv_modes: int = 4
    y_norm: float = 0.0
    y_seed: int = 12345
    target_norm: float = 1.0
    horizon: float = 0.2
    samples: int = 1000
    direction: int = 1
    phi: str = "point_0"
    fd_eps: float = 0.0
    tolerance: float = 0.05
    backend: str = "auto"

    def domain(self) -> DomainSpec:
        return DomainSpec(self.L, self.nu, self.shift_a)

    def noise(self) -> NoiseOperator:
        return NoiseOperator(self.gamma, self.shift_iso)

    def sim(self, **kw) -> SimConfig:
        base = dict(
            K=self.modes, dt=self.dt, T=self.T, scheme=self.scheme, cutoff_R=self.cutoff_R, seed=self.seed,
            record_stride=self.record_stride, nonlinear=self.nonlinear,
            backend=None if self.backend == "auto" else self.backend,
        )
        base.update(kw)
        return SimConfig(**base)

    def resolved(self) -> dict:
        d = asdict(self)
        d["shift_a"] = self.domain().shift_a
        d["backend"] = kernels.get(None if self.backend == "auto" else self.backend).NAME
        return d


_FIELDS = {f.name: f for f in fields(RunConfig)}
_OPTIONAL_FLOAT = {"shift_a", "cutoff_R"}


def _convert(key: str, raw: str, line: int | None = None):
    f = _FIELDS[key]
    text = raw.strip()
    try:
        if key in _OPTIONAL_FLOAT:
            return None if text.lower() in ("", "none") else float(text)
        if f.type in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if f.type in ("int", int):
            return int(text)
        if f.type in ("float", float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}", line) from None


def _validate(cfg: RunConfig) -> RunConfig:
    checks = [
        (cfg.command in COMMANDS, f"command must be one of {COMMANDS}"),
        (cfg.modes >= 1, "modes must be >= 1"),
        (cfg.dt > 0 and math.isfinite(cfg.dt), "dt must be positive"),
        (cfg.T >= cfg.dt, "T must be >= dt"),
        (cfg.L > 0, "L must be positive"),
        (cfg.nu > 0, "nu must be positive"),
        (math.isfinite(cfg.gamma), "gamma must be finite"),
        (cfg.shift_a is None or cfg.shift_a >= 0, "shift_a must be >= 0"),
        (cfg.cutoff_R is None or cfg.cutoff_R >= 1, "cutoff_R must be >= 1"),
        (cfg.burn_in >= 0, "burn_in must be >= 0"),
        (cfg.workers >= 1, "workers must be >= 1"),
        (cfg.seed >= 0, "seed must be >= 0"),
        (cfg.scheme in ("direct-u", "v-plus-z"), "scheme must be direct-u or v-plus-z"),
        (cfg.record_stride >= 1, "record_stride must be >= 1"),
        (cfg.trajectories >= 1, "trajectories must be >= 1"),
        (cfg.samples >= 2, "samples must be >= 2"),
        (cfg.horizon > 0, "horizon must be positive"),
        (1 <= cfg.direction <= 2 * cfg.modes, "direction must be a mode index in 1..2*modes"),
        (cfg.backend in ("auto",) + tuple(kernels.BACKENDS), f"backend must be auto or one of {sorted(kernels.BACKENDS)}"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    try:
        cfg.domain()
        for name in _split(cfg.observables):
            make_observable(name, cfg.L)
        make_observable(cfg.phi, cfg.L)
        _occupation_pairs(cfg.occupation)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _split(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _occupation_pairs(text: str) -> list[tuple[float, float]]:
    """``alpha:R`` pairs separated by ``;`` or ``,``."""
    pairs = []
    for item in text.replace(";", ",").split(","):
        if not item.strip():
            continue
        a, sep, R = item.partition(":")
        if not sep:
            raise ValueError(f"occupation entry {item!r} is not alpha:R")
        pairs.append((float(a), float(R)))
    return pairs


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Flat ``key = value`` file contents plus already-typed overrides."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key = key.strip().replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        values[key] = _convert(key, val, lineno)
    for key, val in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, val) if isinstance(val, str) else val
    return _validate(RunConfig(**values))


def header(cfg: RunConfig) -> str:
    lines = ["# tool=stochks", f"# tool_version={__version__}"]
    for k, v in cfg.resolved().items():
        lines.append(f"# {k}={v:.17g}" if isinstance(v, float) else f"# {k}={v}")
    return "\n".join(lines) + "\n"


def _initial_state(cfg: RunConfig, norm: float, stream: int = 0) -> np.ndarray:
    if norm == 0:
        return np.zeros(2 * cfg.modes)
    rng = np.random.default_rng([cfg.y_seed, stream])
    return np.array(SpectralField.random(cfg.modes, rng, norm))


def _pool_map(cfg: RunConfig, fn, items):
    if cfg.workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, items))


def _derived_path(out: str, tag: str) -> str:
    p = Path(out)
    return str(p.with_name(f"{p.stem}_{tag}{p.suffix}"))


class _Output:
    def __init__(self, path: str):
        self.path = path
        self.buf = io.StringIO()

    def __enter__(self):
        return self.buf

    def __exit__(self, exc_type, *_):
        if exc_type is not None:
            return False
        text = self.buf.getvalue()
        if self.path == "-":
            sys.stdout.write(text)
        else:
            Path(self.path).write_text(text)
        return False


def _require_admissible(cfg: RunConfig):
    if not admissible_ipotG(cfg.gamma):
        raise _Admissibility(f"gamma={cfg.gamma} fails the Hilbert-Schmidt condition (needs gamma < 3/4)")


class _Admissibility(Exception):
    pass


def cmd_check(cfg: RunConfig):
    win = regularity_window(cfg.gamma)
    spec = cfg.domain()
    with _Output(cfg.out) as fh:
        fh.write(header(cfg))
        for line in win.describe():
            fh.write(line + "\n")
        fh.write(f"shift a: {spec.shift_a:.17g} (threshold 1/(4 nu) = {spec.shift_threshold:.17g}, "
                 f"stabilizing: {str(spec.shift_is_stabilizing).lower()})\n")
    if not win.ipotG:
        raise _Admissibility("ipotG fails")


def cmd_simulate(cfg: RunConfig):
    _require_admissible(cfg)
    spec, G = cfg.domain(), cfg.noise()
    sim = cfg.sim()
    y = _initial_state(cfg, cfg.y_norm)

    def run(m):
        return simulate(spec, G, sim, y, trajectories=(m,))

    trajs = _pool_map(cfg, run, list(range(cfg.trajectories)))
    for m, traj in enumerate(trajs):
        path = cfg.out if m == 0 or cfg.out == "-" else _derived_path(cfg.out, f"trj{m}")
        with _Output(path) as fh:
            fh.write(header(cfg))
            fh.write(f"# trajectory={m}\n")
            write_trajectory_csv(fh, traj, cfg.csv_modes)


def cmd_invariant(cfg: RunConfig):
    _require_admissible(cfg)
    spec, G = cfg.domain(), cfg.noise()
    sim = cfg.sim()
    y = _initial_state(cfg, cfg.y_norm)
    pairs = _occupation_pairs(cfg.occupation)
    names = _split(cfg.observables)

    def run(m):
        return kb_average(spec, G, sim, y, names, cfg.burn_in, pairs, trajectories=(m,))

    accs = _pool_map(cfg, run, list(range(cfg.trajectories)))
    with _Output(cfg.out) as fh:
        fh.write(header(cfg))
        for m, acc in enumerate(accs):
            if cfg.trajectories > 1:
                fh.write(f"# trajectory={m}\n")
            write_statistics_csv(fh, acc)
    if pairs:
        path = "-" if cfg.out == "-" else _derived_path(cfg.out, "occupation")
        with _Output(path) as fh:
            fh.write(header(cfg))
            for m, acc in enumerate(accs):
                if cfg.trajectories > 1:
                    fh.write(f"# trajectory={m}\n")
                write_occupation_csv(fh, acc)


def cmd_mixing(cfg: RunConfig):
    _require_admissible(cfg)
    spec, G = cfg.domain(), cfg.noise()
    sim = cfg.sim()
    names = _split(cfg.observables)
    starts = [np.zeros(2 * cfg.modes), _initial_state(cfg, cfg.y_norm if cfg.y_norm > 0 else 1.0, 1)]

    def run(m):
        return kb_average(spec, G, sim, starts[m], names, cfg.burn_in, trajectories=(m,))

    accs = _pool_map(cfg, run, [0, 1])
    with _Output(cfg.out) as fh:
        fh.write(header(cfg))
        fh.write("observable,average_1,stderr_1,average_2,stderr_2,discrepancy,pass\n")
        for k in names:
            e1, e2 = accs[0].estimate(k), accs[1].estimate(k)
            scale = 0.5 * (abs(e1.average) + abs(e2.average))
            d = 0.0 if e1.average == e2.average else abs(e1.average - e2.average) / scale
            fh.write(f"{k},{e1.average:.17g},{e1.stderr:.17g},{e2.average:.17g},{e2.stderr:.17g},"
                     f"{d:.17g},{str(d <= cfg.tolerance).lower()}\n")


def _merge(estimates: list[Estimate]) -> Estimate:
    """Pool batch estimates (means and standard errors) into one, order-independent of scheduling."""
    n = np.array([e.n for e in estimates], dtype=np.float64)
    mean = np.array([e.average for e in estimates])
    var = np.array([e.stderr**2 * e.n * (e.n - 1) for e in estimates])  # sum of squared deviations
    total = n.sum()
    grand = float(np.sum(n * mean) / total)
    ss = float(np.sum(var) + np.sum(n * (mean - grand) ** 2))
    return Estimate(grand, math.sqrt(ss / (total - 1) / total), int(total))


def cmd_gradient(cfg: RunConfig):
    _require_admissible(cfg)
    spec, G = cfg.domain(), cfg.noise()
    sim = cfg.sim()
    y = _initial_state(cfg, cfg.y_norm)
    h = np.array(SpectralField.unit(cfg.modes, cfg.direction))
    phi = make_observable(cfg.phi, cfg.L)
    batch = 1000
    chunks = [(lo, min(cfg.samples, lo + batch) - lo) for lo in range(0, cfg.samples, batch)]

    def bel(c):
        return bel_gradient(spec, G, sim, y, h, phi, cfg.horizon, c[1], batch=batch, first_trajectory=c[0])

    def fd(c):
        return fd_gradient(spec, G, sim, y, h, phi, cfg.horizon, c[1], cfg.fd_eps, batch=batch, first_trajectory=c[0])

    rows = [("bel", _merge(_pool_map(cfg, bel, chunks)))]
    if cfg.fd_eps > 0:
        rows.append(("central_difference", _merge(_pool_map(cfg, fd, chunks))))
    with _Output(cfg.out) as fh:
        fh.write(header(cfg))
        fh.write("method,estimate,stderr,n_samples\n")
        for name, e in rows:
            fh.write(f"{name},{e.average:.17g},{e.stderr:.17g},{e.n}\n")


def cmd_control(cfg: RunConfig):
    spec = cfg.domain()
    if not spec.shift_is_stabilizing:
        raise ConfigError(f"shift_a must exceed 1/(4 nu) = {spec.shift_threshold}")
    y = _initial_state(cfg, cfg.y_norm if cfg.y_norm > 0 else 1.0, 0)
    target = _initial_state(cfg, cfg.target_norm, 1)
    rep = synthesize_control(y, target, cfg.horizon, spec, cfg.modes, cfg.dt)
    extra = {k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in cfg.resolved().items()}
    extra.update(tool="stochks", tool_version=__version__, content="z_bar(t)",
                 endpoint_error=f"{rep.endpoint_error:.17g}", relative_error=f"{rep.relative_error:.17g}")
    extra.pop("L")
    if cfg.out == "-":
        sys.stdout.write(header(cfg))
        sys.stdout.write(f"# endpoint_error={rep.endpoint_error:.17g}\n# relative_error={rep.relative_error:.17g}\n")
        for j, x in enumerate(rep.z_bar[-1], start=1):
            sys.stdout.write(f"{j},{x:.17g}\n")
    else:
        write_snapshot(cfg.out, rep.z_bar[-1], cfg.L, extra)


HANDLERS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "invariant": cmd_invariant,
    "mixing": cmd_mixing,
    "gradient": cmd_gradient,
    "control": cmd_control,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochks", description="Stochastic Kuramoto-Sivashinsky simulations.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--out", help="output path ('-' for stdout)")
    p.add_argument("--seed", type=int)
    p.add_argument("--modes", type=int, help="number of sine/cosine pairs K")
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float, help="time horizon")
    p.add_argument("--L", type=float, help="period")
    p.add_argument("--nu", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--shift-iso", action="store_const", const=True, default=None,
                   help="apply the pairwise sine/cosine shift to the noise")
    p.add_argument("--shift-a", type=float)
    p.add_argument("--cutoff-R", type=float)
    p.add_argument("--burn-in", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {"command": args.command}
    for flag in ("out", "seed", "modes", "dt", "T", "L", "nu", "gamma", "shift_iso", "shift_a", "cutoff_R",
                 "burn_in", "workers"):
        val = getattr(args, flag)
        if val is not None:
            overrides[flag] = val
    try:
        for item in args.set:
            key, sep, val = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            overrides[key.strip().replace("-", "_")] = val
        text = Path(args.config).read_text() if args.config else ""
        cfg = parse_config(text, overrides)
        HANDLERS[cfg.command](cfg)
    except (ConfigError, OSError) as exc:
        print(f"stochks: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"stochks: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except _Admissibility as exc:
        print(f"stochks: admissibility failure: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
