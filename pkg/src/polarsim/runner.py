"""Time-loop orchestration: adaptive stepping, sentinels, classification.

The runner advances any of the five models to T_end, halving dt whenever
the explicit stages would lose positivity and doubling it back (up to
dt_max) after a sustained stretch of headroom.  Step sizes move on a
power-of-two ladder so the cached matrix factorizations are reused; this
is the dominant cost lever.  The run stops early on a steady state or on
a blow-up sentinel: absolute density guard, dt under dt_floor, or one
cell holding more than a set fraction of the total mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    BoundaryField,
    Field1D,
    Grid1D,
    Params,
    SimState,
    build_grid_2d,
    seeded_random_initial,
)
from .diagnostics import (
    RunHistory,
    RunVerdict,
    Snapshot,
    Thresholds,
    classify_run,
    detect_steady,
    polarisation_index,
    total_mass,
)
from .heuristic import ReducedState, reduced_face_velocities, reduced_grid
from .scheme1d import (
    BlowUpDetected,
    FaceVelocities1D,
    step_exchange_halfline,
    step_periodic,
    step_simplified_halfline,
)
from .scheme2d import (
    face_velocities,
    solve_potential,
    stable_dt_2d,
    step_mu_2d,
    step_rho_2d,
)

MODELS = ("periodic1d", "simplified1d", "exchange1d", "exchange2d", "reduced")

GROWTH_STREAK = 25  # headroom steps required before dt doubles
MAX_STEPS_PER_SNAPSHOT = 50_000


@dataclass
class SeriesPoint:
    t: float
    dt: float
    peak: float
    mass: float
    defect: float
    index: float


@dataclass
class RunResult:
    history: RunHistory
    verdict: RunVerdict
    final_state: object
    series: list[SeriesPoint]


def _stable_dt_faces(values: np.ndarray, dx: float, extra_rate: float = 0.0) -> float:
    """Positivity-safe dt for explicit upwinding: per-cell outflow < 0.9."""
    outflow = max(float(np.max(values)), 0.0)
    inflow = max(-float(np.min(values)), 0.0)
    rate = (outflow + inflow) / dx + extra_rate
    if rate <= 0:
        return math.inf
    return 0.9 / rate


@dataclass
class _Driver:
    state0: object
    cell_measure: float
    prepare: Callable[[object], tuple[object, float]]
    advance: Callable[[object, object, float], object]
    rho_values: Callable[[object], np.ndarray]
    mass: Callable[[object], float]
    mu_values: Callable[[object], np.ndarray | None]
    index_values: Callable[[object], np.ndarray | None]
    bounded_grid: Grid1D | None = None


def _exp_profile_initial(grid: Grid1D, params: Params, eps: float, seed: int,
                         with_mu: bool) -> SimState:
    """Non-increasing exp(-x) profile, optional noise, rescaled to mass M."""
    rng = np.random.default_rng(seed)
    rho = np.exp(-grid.centers())
    if eps > 0:
        rho = rho * (1.0 + eps * rng.uniform(-1.0, 1.0, size=grid.N_x))
    mu = None
    mass = rho.sum() * grid.dx
    if with_mu:
        mu_val = (params.k_on / params.k_off) * rho[0]
        mass += mu_val
    factor = params.M / mass
    rho = rho * factor
    if with_mu:
        mu = BoundaryField([mu_val * factor])
    return SimState(
        rho=Field1D(grid, rho),
        mu=mu,
        seed_info={"seed": seed, "eps": eps, "profile": "exp(-x)"},
    )


def _make_driver(config, initial_state=None) -> _Driver:
    params = config.params()
    model = config.model

    if model == "periodic1d":
        grid = Grid1D.periodic(config.N_x)
        state = initial_state or seeded_random_initial(
            grid, params, config.eps, config.seed, with_boundary=False
        )
        u = FaceVelocities1D.from_profile(
            lambda x: np.sin(2.0 * np.pi * x / grid.length), grid
        )
        limit = _stable_dt_faces(params.chi * u.values, grid.dx)
        return _Driver(
            state0=state,
            cell_measure=grid.dx,
            prepare=lambda s: (u, limit),
            advance=lambda s, aux, dt: SimState(
                rho=step_periodic(s.rho, aux, dt, D=params.D, chi=params.chi),
                t=s.t + dt,
                step=s.step + 1,
                seed_info=s.seed_info,
            ),
            rho_values=lambda s: s.rho.values,
            mass=lambda s: total_mass(s),
            mu_values=lambda s: None,
            index_values=lambda s: None,
        )

    if model == "simplified1d":
        grid = Grid1D.bounded(config.N_x, config.L)
        state = initial_state or _exp_profile_initial(
            grid, params, config.eps, config.seed, with_mu=False
        )

        def prepare(s):
            return None, _stable_dt_faces(
                np.array([-float(s.rho.values[0])]), grid.dx
            )

        return _Driver(
            state0=state,
            cell_measure=grid.dx,
            prepare=prepare,
            advance=lambda s, aux, dt: SimState(
                rho=step_simplified_halfline(s.rho, dt, config.blowup_guard),
                t=s.t + dt,
                step=s.step + 1,
                seed_info=s.seed_info,
            ),
            rho_values=lambda s: s.rho.values,
            mass=lambda s: total_mass(s),
            mu_values=lambda s: None,
            index_values=lambda s: None,
            bounded_grid=grid,
        )

    if model == "exchange1d":
        grid = Grid1D.bounded(config.N_x, config.L)
        state = initial_state or _exp_profile_initial(
            grid, params, config.eps, config.seed, with_mu=True
        )

        def prepare(s):
            speed = params.chi * s.mu.scalar
            limit = _stable_dt_faces(
                np.array([-speed]), grid.dx, extra_rate=params.k_on / grid.dx
            )
            return None, min(limit, 1.0 / params.k_off)

        return _Driver(
            state0=state,
            cell_measure=grid.dx,
            prepare=prepare,
            advance=lambda s, aux, dt: step_exchange_halfline(s, dt, params),
            rho_values=lambda s: s.rho.values,
            mass=lambda s: total_mass(s),
            mu_values=lambda s: s.mu.values,
            index_values=lambda s: None,
            bounded_grid=grid,
        )

    if model == "exchange2d":
        grid = build_grid_2d(params.r, config.N_x, config.N_y)
        state = initial_state or seeded_random_initial(
            grid, params, config.eps, config.seed
        )

        def prepare(s):
            c = solve_potential(s.mu, grid, params, config.sign_convention)
            u = face_velocities(c, params.chi)
            limit = min(stable_dt_2d(u, grid, params), 1.0 / params.k_off)
            return (c, u), limit

        def advance(s, aux, dt):
            c, u = aux
            mu_new = step_mu_2d(s.mu, s.rho.values[-1, :], dt, params)
            rho_new = step_rho_2d(s.rho, u, s.mu, mu_new, dt, params.D)
            return SimState(
                rho=rho_new,
                mu=mu_new,
                c=None,
                t=s.t + dt,
                step=s.step + 1,
                seed_info=s.seed_info,
            )

        return _Driver(
            state0=state,
            cell_measure=grid.cell_area,
            prepare=prepare,
            advance=advance,
            rho_values=lambda s: s.rho.values,
            mass=lambda s: total_mass(s),
            mu_values=lambda s: s.mu.values,
            index_values=lambda s: s.mu.values,
        )

    if model == "reduced":
        grid = reduced_grid(params, config.N_y)
        if initial_state is None:
            seeded = seeded_random_initial(
                grid, params, config.eps, config.seed, with_boundary=False
            )
            state = ReducedState(nu=seeded.rho)
        else:
            state = initial_state

        def prepare(s):
            u = reduced_face_velocities(s.nu, params)
            return u, _stable_dt_faces(u.values, grid.dx)

        return _Driver(
            state0=state,
            cell_measure=grid.dx,
            prepare=prepare,
            advance=lambda s, aux, dt: ReducedState(
                nu=step_periodic(s.nu, aux, dt, D=params.D, chi=1.0),
                t=s.t + dt,
                step=s.step + 1,
            ),
            rho_values=lambda s: s.nu.values,
            mass=lambda s: s.nu.mass(),
            mu_values=lambda s: None,
            index_values=lambda s: s.nu.values,
        )

    raise ValueError(f"unknown model {model!r}")


def simulate(config, thresholds: Thresholds | None = None,
             initial_state=None) -> RunResult:
    """Run one simulation to T_end, a steady state, or a sentinel."""
    if thresholds is None:
        thresholds = Thresholds(
            polarised=config.pol_threshold, homogeneous=config.homog_threshold
        )
    driver = _make_driver(config, initial_state)
    state = driver.state0
    history = RunHistory(model=config.model)
    history.peak_guard = min(
        config.blowup_guard,
        thresholds.concentration_fraction * config.M / driver.cell_measure,
    )
    mass0 = driver.mass(state)
    history.initial_mass = mass0
    series: list[SeriesPoint] = []

    def current_index(s) -> float:
        vals = driver.index_values(s)
        if vals is None or vals.sum() <= 0:
            return 0.0
        return polarisation_index(vals)

    def snapshot(s, dt_now: float):
        mu = driver.mu_values(s)
        history.snapshots.append(
            Snapshot(t=s.t, rho=driver.rho_values(s).copy(),
                     mu=None if mu is None else mu.copy())
        )
        mass = driver.mass(s)
        defect = abs(mass - mass0) / abs(mass0)
        history.max_defect = max(history.max_defect, defect)
        series.append(
            SeriesPoint(
                t=s.t,
                dt=dt_now,
                peak=float(np.max(driver.rho_values(s))),
                mass=mass,
                defect=defect,
                index=current_index(s),
            )
        )

    dt = config.dt
    snapshot(state, dt)
    history.peak_density = float(np.max(driver.rho_values(state)))
    grow_streak = 0
    steps_since_snapshot = 0
    stop = None  # None | "sentinel" | "steady" | "t-end"

    while state.t < config.T_end * (1.0 - 1e-12):
        aux, limit = driver.prepare(state)
        while dt > limit:
            dt *= 0.5
            grow_streak = 0
            if dt < config.dt_floor:
                history.dt_floor_hit = True
                history.sentinel = "dt-floor"
                stop = "sentinel"
                break
        if stop:
            break
        if 2.0 * dt <= limit and 2.0 * dt <= config.dt_max:
            grow_streak += 1
            if grow_streak >= GROWTH_STREAK:
                dt *= 2.0
                grow_streak = 0
        else:
            grow_streak = 0

        dt_step = min(dt, config.T_end - state.t)
        try:
            state = driver.advance(state, aux, dt_step)
        except BlowUpDetected:
            history.sentinel = "peak-guard"
            stop = "sentinel"
            break
        steps_since_snapshot += 1

        peak = float(np.max(driver.rho_values(state)))
        history.peak_density = max(history.peak_density, peak)
        if peak >= history.peak_guard:
            history.sentinel = "peak-guard"
            stop = "sentinel"
            break

        due = (
            state.t - history.snapshots[-1].t
            >= config.snapshot_every * (1.0 - 1e-9)
            or steps_since_snapshot >= MAX_STEPS_PER_SNAPSHOT
            or state.t >= config.T_end * (1.0 - 1e-12)
        )
        if due:
            snapshot(state, dt_step)
            steps_since_snapshot = 0
            if detect_steady(
                history.snapshots, thresholds.steady_window, thresholds.steady_tol
            ):
                history.steady_time = state.t
                stop = "steady"
                break

    if not history.snapshots or history.snapshots[-1].t < state.t:
        snapshot(state, dt)
    history.final_time = state.t
    history.index_values = driver.index_values(state)

    if driver.bounded_grid is not None:
        grid = driver.bounded_grid
        tail = driver.rho_values(state)[int(math.floor(0.9 * grid.N_x)):]
        history.truncation_warning = bool(
            tail.sum() * grid.dx > 1e-6 * config.M
        )

    verdict = classify_run(history, thresholds)
    return RunResult(
        history=history, verdict=verdict, final_state=state, series=series
    )
