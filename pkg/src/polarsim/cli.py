"""Configuration, run orchestration and plain-text output.

Configs are flat ``key = value`` documents (``#`` comments allowed); every
key is also a command-line flag, and flags win over the file.  Outputs are
tab-separated tables with a gnuplot-friendly comment header that embeds
the fully resolved config and the generator/seed provenance, so every
artifact is self-describing and runs with identical configs are
bit-identical.

Exit codes: 0 homogeneous/steady, 2 polarised, 3 blow-up-suspected,
4 undecided, 1 error.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .core import RNG_ALGORITHM, Params
from .diagnostics import (
    Thresholds,
    advection_convergence_case,
    convergence_order,
    estimate_critical_mass,
    heat_convergence_case,
)
from .linalg import (
    assemble_diffusion_2d,
    assemble_heat_bounded,
    assemble_heat_periodic,
    assemble_screened_2d,
    dump_coo,
)
from .core import build_grid_2d
from .runner import MODELS, RunResult, simulate
from .scheme2d import SIGN_CONVENTIONS, solve_potential

EXIT_CODES = {
    "homogeneous": 0,
    "polarised": 2,
    "blow-up-suspected": 3,
    "undecided": 4,
}

OUTPUT_ROOT_ENV = "POLARSIM_OUT"

PARAM_SWEEP_FIELDS = ("D", "chi", "S", "k_on", "k_off", "alpha", "r", "M")


class ConfigError(ValueError):
    """Invalid configuration; the message names the key (and line)."""


@dataclass(frozen=True)
class RunConfig:
    model: str
    M: float
    D: float = 1.0
    chi: float = 1.0
    S: object = 1.0  # float or per-node array
    k_on: float = 1.0
    k_off: float = 1.0
    alpha: float = 0.1
    r: float = 1.0
    N_x: int = 64
    N_y: int = 64
    L: float = 10.0
    dt: float = 1e-3
    dt_max: float | None = None
    dt_floor: float = 1e-10
    T_end: float = 50.0
    seed: int = 0
    eps: float = 0.1
    sign_convention: str = "attractive"
    snapshot_every: float = 0.5
    pol_threshold: float = 0.5
    homog_threshold: float = 0.05
    blowup_guard: float = 1e6

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(
                f"model must be one of {', '.join(MODELS)}, got {self.model!r}"
            )
        if self.dt_max is None:
            object.__setattr__(self, "dt_max", self.dt)
        try:
            self.params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.N_x < 3:
            raise ConfigError(f"N_x must be >= 3, got {self.N_x}")
        if self.N_y < 3:
            raise ConfigError(f"N_y must be >= 3, got {self.N_y}")
        if not self.L > 0:
            raise ConfigError(f"L must be > 0, got {self.L}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if not self.dt_floor > 0:
            raise ConfigError(f"dt_floor must be > 0, got {self.dt_floor}")
        if self.dt_max < self.dt:
            raise ConfigError(f"dt_max = {self.dt_max} is below dt = {self.dt}")
        if self.T_end < 0:
            raise ConfigError(f"T_end must be >= 0, got {self.T_end}")
        if not 0 <= self.eps < 1:
            raise ConfigError(f"eps must be in [0, 1), got {self.eps}")
        if self.sign_convention not in SIGN_CONVENTIONS:
            raise ConfigError(
                f"sign_convention must be one of {', '.join(SIGN_CONVENTIONS)}"
            )
        if not self.snapshot_every > 0:
            raise ConfigError(
                f"snapshot_every must be > 0, got {self.snapshot_every}"
            )
        if not 0 <= self.homog_threshold < self.pol_threshold <= 1:
            raise ConfigError(
                "thresholds must satisfy 0 <= homog_threshold < pol_threshold <= 1"
            )
        if not self.blowup_guard > 0:
            raise ConfigError(f"blowup_guard must be > 0, got {self.blowup_guard}")
        if self.model in ("exchange1d", "exchange2d") and self.dt * self.k_off > 1:
            raise ConfigError(
                f"dt*k_off = {self.dt * self.k_off:.6g} > 1 breaks mu positivity"
            )

    def params(self) -> Params:
        S = self.S
        if isinstance(S, (list, tuple)):
            S = np.asarray(S, dtype=float)
        return Params(
            D=self.D, chi=self.chi, k_on=self.k_on, k_off=self.k_off,
            S=S, alpha=self.alpha, r=self.r, M=self.M,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                value = ",".join(repr(float(v)) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha1(self.to_text().encode()).hexdigest()[:12]


_INT_KEYS = {"N_x", "N_y", "seed"}
_STR_KEYS = {"model", "sign_convention"}
_KNOWN_KEYS = {f.name for f in fields(RunConfig)}


def _convert(key: str, value: str, lineno: int | None = None):
    where = f"line {lineno}: " if lineno is not None else ""
    if key in _STR_KEYS:
        return value
    if key in _INT_KEYS:
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{where}key {key!r} expects an integer, got {value!r}")
    if key == "S" and "," in value:
        try:
            return np.array([float(v) for v in value.split(",")])
        except ValueError:
            raise ConfigError(f"{where}key 'S' expects numbers, got {value!r}")
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{where}key {key!r} expects a number, got {value!r}")


def parse_config(text: str) -> RunConfig:
    """Parse a flat key = value document into a validated RunConfig."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, val, lineno)
    if "model" not in values:
        raise ConfigError("missing required key 'model'")
    if "M" not in values:
        raise ConfigError("missing required key 'M'")
    return RunConfig(**values)


def _header(config: RunConfig, columns: list[str]) -> str:
    lines = ["# polarsim table"]
    lines.append("# columns: " + " ".join(columns))
    lines.append(f"# generator = {RNG_ALGORITHM}")
    for cfg_line in config.to_text().strip().splitlines():
        lines.append("# " + cfg_line)
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_table(path: Path, config: RunConfig, columns: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(_header(config, columns))
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def _grids_for_output(config: RunConfig):
    from .core import Grid1D
    from .heuristic import reduced_grid

    if config.model == "exchange2d":
        return build_grid_2d(config.r, config.N_x, config.N_y)
    if config.model == "periodic1d":
        return Grid1D.periodic(config.N_x)
    if config.model == "reduced":
        return reduced_grid(config.params(), config.N_y)
    return Grid1D.bounded(config.N_x, config.L)


def write_run_outputs(config: RunConfig, result: RunResult, run_dir: Path) -> None:
    """Snapshots, series and summary for one finished run."""
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(
        f"# generator = {RNG_ALGORITHM}\n" + config.to_text()
    )

    grid = _grids_for_output(config)
    params = config.params()
    hist = result.history

    _write_table(
        run_dir / "series.tsv",
        config,
        ["t", "dt", "peak", "mass", "defect", "index"],
        [(p.t, p.dt, p.peak, p.mass, p.defect, p.index) for p in result.series],
    )

    for i, snap in enumerate(hist.snapshots):
        if config.model == "exchange2d":
            x, y = grid.x_centers(), grid.y_centers()
            rows = []
            for j in range(grid.N_x):
                for k in range(grid.N_y):
                    rows.append(
                        (snap.t, j + 1, k + 1, x[j], y[k], snap.rho[j, k])
                    )
            _write_table(
                run_dir / f"rho_{i:04d}.tsv",
                config,
                ["t", "j", "k", "x", "y", "rho"],
                rows,
            )
            from .core import BoundaryField

            c = solve_potential(
                BoundaryField(snap.mu), grid, params, config.sign_convention
            )
            c_wall = c.values[-1, :]
            _write_table(
                run_dir / f"boundary_{i:04d}.tsv",
                config,
                ["t", "k", "y", "mu", "c_wall"],
                [
                    (snap.t, k + 1, y[k], snap.mu[k], c_wall[k])
                    for k in range(grid.N_y)
                ],
            )
        else:
            x = grid.centers()
            _write_table(
                run_dir / f"rho_{i:04d}.tsv",
                config,
                ["t", "j", "x", "rho"],
                [(snap.t, j + 1, x[j], snap.rho[j]) for j in range(grid.N_x)],
            )
            if snap.mu is not None:
                _write_table(
                    run_dir / f"boundary_{i:04d}.tsv",
                    config,
                    ["t", "k", "y", "mu"],
                    [(snap.t, 1, 0.0, float(snap.mu[0]))],
                )

    v = result.verdict
    summary = [
        f"verdict = {v.klass}",
        f"exit_code = {EXIT_CODES[v.klass]}",
        f"polarisation_index = {v.polarisation_index!r}",
        f"final_time = {v.final_time!r}",
        f"peak_density = {v.peak_density!r}",
        f"conservation_defect = {v.conservation_defect!r}",
        f"dt_floor_hit = {v.dt_floor_hit}",
        f"peak_guard = {v.peak_guard!r}",
        f"steady = {v.steady}",
        f"steady_time = {v.steady_time!r}",
        f"sentinel = {hist.sentinel}",
        f"truncation_warning = {hist.truncation_warning}",
        f"initial_mass = {hist.initial_mass!r}",
        f"snapshots = {len(hist.snapshots)}",
        f"generator = {RNG_ALGORITHM}",
        f"seed = {config.seed}",
        "",
        "# resolved config",
    ]
    summary.extend(config.to_text().strip().splitlines())
    (run_dir / "summary.txt").write_text("\n".join(summary) + "\n")


def run_command(config: RunConfig, out_root: Path) -> int:
    result = simulate(config)
    run_dir = out_root / f"run-{config.digest()}"
    write_run_outputs(config, result, run_dir)
    print(f"{run_dir}  verdict={result.verdict.klass} "
          f"index={result.verdict.polarisation_index:.4f}")
    return EXIT_CODES[result.verdict.klass]


def sweep_command(
    config: RunConfig, parameter: str, values: list[float], out_root: Path
) -> int:
    """One run per value; per-row failures do not abort the sweep."""
    if parameter not in PARAM_SWEEP_FIELDS:
        raise ConfigError(
            f"sweep parameter must be one of {', '.join(PARAM_SWEEP_FIELDS)}"
        )
    rows = []
    for value in values:
        probe_cfg = replace(config, **{parameter: value})
        try:
            result = simulate(probe_cfg)
            write_run_outputs(
                probe_cfg, result, out_root / f"run-{probe_cfg.digest()}"
            )
            v = result.verdict
            rows.append(
                (value, v.klass, v.polarisation_index, v.peak_density,
                 v.conservation_defect)
            )
        except Exception as exc:  # recorded, not fatal to the sweep
            rows.append((value, f"error:{type(exc).__name__}", math.nan,
                         math.nan, math.nan))
    out_root.mkdir(parents=True, exist_ok=True)
    _write_table(
        out_root / f"sweep-{parameter}-{config.digest()}.tsv",
        config,
        [parameter, "verdict", "index", "peak", "defect"],
        rows,
    )
    for row in rows:
        print("\t".join(_fmt(v) for v in row))
    return 0


def bisect_command(
    config: RunConfig,
    m_lo: float,
    m_hi: float,
    tol: float,
    budget: int,
    out_root: Path,
) -> int:
    """Critical-mass bisection plus a non-gating cross-seed report."""

    def probe(mass: float):
        return simulate(replace(config, M=mass)).verdict

    estimate = estimate_critical_mass(probe, (m_lo, m_hi), tol=tol, budget=budget)

    robustness = []
    for seed in (config.seed, config.seed + 1, config.seed + 2):
        for mass in estimate.bracket:
            verdict = simulate(replace(config, M=mass, seed=seed)).verdict
            robustness.append((seed, mass, verdict.klass))

    out_root.mkdir(parents=True, exist_ok=True)
    _write_table(
        out_root / f"bisect-{config.digest()}.tsv",
        config,
        ["probe", "M", "verdict"],
        [(i, p.M, p.klass) for i, p in enumerate(estimate.probes)],
    )
    _write_table(
        out_root / f"bisect-robustness-{config.digest()}.tsv",
        config,
        ["seed", "M", "verdict"],
        robustness,
    )
    print(f"M_star = {estimate.M_star!r} "
          f"bracket = [{estimate.bracket[0]!r}, {estimate.bracket[1]!r}] "
          f"probes = {len(estimate.probes)}")
    return 0


def converge_command(resolutions: list[int], case: str) -> int:
    if case in ("both", "diffusion"):
        res = convergence_order(heat_convergence_case, resolutions)
        print(f"diffusion order = {res.order!r} exact = {res.exact}")
        for dx, err in res.samples:
            print(f"  dx={dx!r} l1_error={err!r}")
    if case in ("both", "advection"):
        res = convergence_order(advection_convergence_case, resolutions)
        print(f"advection order = {res.order!r} exact = {res.exact}")
        for dx, err in res.samples:
            print(f"  dx={dx!r} l1_error={err!r}")
    return 0


def dump_matrix_command(config: RunConfig, which: str) -> int:
    if which == "heat":
        grid_dx = 1.0 / config.N_x
        mat = assemble_heat_periodic(config.N_x, grid_dx, config.dt)
    elif which == "heat-bounded":
        mat = assemble_heat_bounded(config.N_x, config.L / config.N_x, config.dt)
    elif which == "diffusion2d":
        grid = build_grid_2d(config.r, config.N_x, config.N_y)
        mat = assemble_diffusion_2d(grid, config.D * config.dt)
    elif which == "screened2d":
        grid = build_grid_2d(config.r, config.N_x, config.N_y)
        mat = assemble_screened_2d(grid, config.alpha)
    else:
        raise ConfigError(f"unknown matrix {which!r}")
    sys.stdout.write(dump_coo(mat))
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="config file (flags win)")
    for f in fields(RunConfig):
        if f.name in _STR_KEYS:
            parser.add_argument(f"--{f.name}", type=str)
        elif f.name in _INT_KEYS:
            parser.add_argument(f"--{f.name}", type=int)
        else:
            parser.add_argument(f"--{f.name}", type=str)


def _config_from_args(args) -> RunConfig:
    values: dict = {}
    if args.config is not None:
        text = Path(args.config).read_text()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _KNOWN_KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _convert(key, val, lineno)
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = (
                flag if f.name in _STR_KEYS or f.name in _INT_KEYS
                else _convert(f.name, str(flag))
            )
    if "model" not in values:
        raise ConfigError("missing required key 'model'")
    if "M" not in values:
        raise ConfigError("missing required key 'M'")
    return RunConfig(**values)


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polarsim",
        description="finite-volume simulation of cell-polarisation models",
    )
    parser.add_argument(
        "--out",
        type=Path,
        default=None,
        help=f"output root (default ${OUTPUT_ROOT_ENV} or ./polarsim-runs)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one model to T_end or a sentinel")
    _add_config_flags(p_run)

    p_sweep = sub.add_parser("sweep", help="re-run while varying one parameter")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--values", required=True, type=_float_list)

    p_bisect = sub.add_parser("bisect", help="bisect the critical mass")
    _add_config_flags(p_bisect)
    p_bisect.add_argument("--m-lo", required=True, type=float)
    p_bisect.add_argument("--m-hi", required=True, type=float)
    p_bisect.add_argument("--tol", type=float, default=0.1)
    p_bisect.add_argument("--budget", type=int, default=20)

    p_conv = sub.add_parser("converge", help="manufactured-solution orders")
    p_conv.add_argument("--resolutions", type=_int_list, default=[32, 64, 128])
    p_conv.add_argument(
        "--case", choices=["both", "diffusion", "advection"], default="both"
    )

    p_dump = sub.add_parser("dump-matrix", help="matrix in (row col value) form")
    _add_config_flags(p_dump)
    p_dump.add_argument(
        "--which",
        required=True,
        choices=["heat", "heat-bounded", "diffusion2d", "screened2d"],
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_root = args.out
    if out_root is None:
        out_root = Path(os.environ.get(OUTPUT_ROOT_ENV, "polarsim-runs"))
    try:
        if args.command == "converge":
            return converge_command(args.resolutions, args.case)
        config = _config_from_args(args)
        if args.command == "run":
            return run_command(config, out_root)
        if args.command == "sweep":
            return sweep_command(config, args.param, args.values, out_root)
        if args.command == "bisect":
            return bisect_command(
                config, args.m_lo, args.m_hi, args.tol, args.budget, out_root
            )
        if args.command == "dump-matrix":
            return dump_matrix_command(config, args.which)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
