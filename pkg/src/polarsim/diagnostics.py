"""Run classification and verification diagnostics.

A completed (or sentinel-terminated) run is summarized by a RunVerdict:
homogeneous, polarised, blow-up-suspected, or undecided.  Polarisation is
measured by the first circular harmonic of the membrane concentration,
which is zero for a uniform distribution and tends to one for a
single-point concentration; wall concentration alone is deliberately not
a polarisation signal, only asymmetry along the membrane is.

Blow-up can never be certified on a grid, so the corresponding verdict is
"blow-up-suspected", triggered by sentinels: an absolute density guard, a
collapsing adaptive time step, or a single cell holding more than a set
fraction of the total mass (the operative signal at desk resolutions,
where the absolute guard is unreachable because cell densities are capped
near M / cell measure by conservation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Field1D, Grid1D, Grid2D, SimState
from .scheme1d import FaceVelocities1D, step_periodic

VERDICT_CLASSES = ("homogeneous", "polarised", "blow-up-suspected", "undecided")


@dataclass(frozen=True)
class Thresholds:
    """Classification knobs; defaults match the reference configuration."""

    polarised: float = 0.5
    homogeneous: float = 0.05
    steady_window: float = 5.0
    steady_tol: float = 1e-6
    concentration_fraction: float = 0.5


@dataclass(frozen=True)
class RunVerdict:
    klass: str
    polarisation_index: float
    final_time: float
    peak_density: float
    conservation_defect: float
    dt_floor_hit: bool
    peak_guard: float
    steady: bool
    steady_time: float | None


@dataclass
class Snapshot:
    t: float
    rho: np.ndarray
    mu: np.ndarray | None = None


@dataclass
class RunHistory:
    """Everything classify_run needs from a finished simulation."""

    model: str
    snapshots: list[Snapshot] = field(default_factory=list)
    final_time: float = 0.0
    peak_density: float = 0.0
    peak_guard: float = math.inf
    sentinel: str | None = None  # "peak-guard" | "dt-floor" | None
    dt_floor_hit: bool = False
    initial_mass: float = 0.0
    max_defect: float = 0.0
    index_values: np.ndarray | None = None
    steady_time: float | None = None
    truncation_warning: bool = False


def total_mass(state: SimState, grid=None) -> float:
    """Discrete mass: bulk density plus the boundary share when present."""
    if grid is None:
        grid = state.rho.grid
    mass = state.rho.mass()
    if state.mu is not None:
        if isinstance(grid, Grid2D):
            mass += float(state.mu.values.sum()) * grid.dy
        else:
            mass += float(state.mu.values.sum())  # point membrane
    return mass


def polarisation_index(mu) -> float:
    """Normalized first circular harmonic of the membrane concentration.

    0 for a uniform distribution (exact orthogonality on the uniform
    grid), 1 for a single-node spike; invariant under rotation and under
    positive scaling.
    """
    values = np.asarray(getattr(mu, "values", mu), dtype=float)
    if values.ndim != 1 or len(values) < 2:
        raise ValueError("polarisation index needs a 1D boundary array")
    total = values.sum()
    if total <= 0:
        raise ValueError("polarisation index undefined for an all-zero field")
    phases = np.exp(1j * (2.0 * np.pi / len(values)) * np.arange(len(values)))
    return float(np.abs(np.dot(values, phases)) / total)


def _relative_rate(a: Snapshot, b: Snapshot) -> float:
    dt = b.t - a.t
    if dt <= 0:
        return 0.0
    scale = max(float(np.max(np.abs(b.rho))), 1e-300)
    rate = float(np.max(np.abs(b.rho - a.rho))) / scale / dt
    if a.mu is not None and b.mu is not None:
        mscale = max(float(np.max(np.abs(b.mu))), 1e-300)
        rate = max(rate, float(np.max(np.abs(b.mu - a.mu))) / mscale / dt)
    return rate


def detect_steady(snapshots: Sequence[Snapshot], window: float, tol: float) -> bool:
    """True iff the fields changed by less than tol (relative, per unit
    time) between every pair of consecutive snapshots over the trailing
    window.  False when the history does not yet span the window."""
    if len(snapshots) < 2:
        return False
    t_end = snapshots[-1].t
    cutoff = t_end - window * (1.0 + 1e-12)
    recent = [s for s in snapshots if s.t >= cutoff]
    if len(recent) < 2:
        return False
    if recent[-1].t - recent[0].t < window * (1.0 - 1e-9):
        return False
    return all(
        _relative_rate(a, b) < tol for a, b in zip(recent[:-1], recent[1:])
    )


def classify_run(history: RunHistory, thresholds: Thresholds = Thresholds()) -> RunVerdict:
    """Map a run history to its verdict; blow-up sentinels dominate."""
    index = 0.0
    if history.index_values is not None and history.index_values.sum() > 0:
        index = polarisation_index(history.index_values)
    steady = history.steady_time is not None or detect_steady(
        history.snapshots, thresholds.steady_window, thresholds.steady_tol
    )
    if history.sentinel is not None or history.dt_floor_hit:
        klass = "blow-up-suspected"
    elif steady and index >= thresholds.polarised:
        klass = "polarised"
    elif steady and index < thresholds.homogeneous:
        klass = "homogeneous"
    else:
        klass = "undecided"
    return RunVerdict(
        klass=klass,
        polarisation_index=index,
        final_time=history.final_time,
        peak_density=history.peak_density,
        conservation_defect=history.max_defect,
        dt_floor_hit=history.dt_floor_hit,
        peak_guard=history.peak_guard,
        steady=steady,
        steady_time=history.steady_time,
    )


@dataclass(frozen=True)
class CriticalMassProbe:
    M: float
    klass: str


@dataclass(frozen=True)
class CriticalMassEstimate:
    M_star: float
    bracket: tuple[float, float]
    probes: tuple[CriticalMassProbe, ...]


def estimate_critical_mass(
    probe: Callable[[float], RunVerdict],
    bracket: tuple[float, float],
    tol: float = 0.1,
    budget: int = 20,
) -> CriticalMassEstimate:
    """Bisect the mass between a homogeneous and a concentrating regime.

    ``probe`` runs one simulation at the given mass (everything else,
    including the seed, fixed) and returns its verdict.  The lower bracket
    must classify homogeneous and the upper polarised or
    blow-up-suspected, otherwise the bracket is rejected.  Probes that
    come back undecided are treated as not-homogeneous, so the estimate
    errs low rather than claiming an uncertified steady state.
    """
    lo, hi = bracket
    if not (lo > 0 and hi > lo):
        raise ValueError(f"invalid bracket {bracket}")
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if budget < 3:
        raise ValueError("budget must allow at least one interior probe")

    probes: list[CriticalMassProbe] = []

    def run(m: float) -> str:
        verdict = probe(m)
        probes.append(CriticalMassProbe(M=m, klass=verdict.klass))
        return verdict.klass

    k_lo = run(lo)
    if k_lo != "homogeneous":
        raise ValueError(f"lower bracket M={lo} classified {k_lo}, not homogeneous")
    k_hi = run(hi)
    if k_hi not in ("polarised", "blow-up-suspected"):
        raise ValueError(
            f"upper bracket M={hi} classified {k_hi}, expected polarised or "
            "blow-up-suspected"
        )
    while hi - lo > tol and len(probes) < budget:
        mid = 0.5 * (lo + hi)
        if run(mid) == "homogeneous":
            lo = mid
        else:
            hi = mid
    return CriticalMassEstimate(
        M_star=0.5 * (lo + hi), bracket=(lo, hi), probes=tuple(probes)
    )


@dataclass(frozen=True)
class ConvergenceResult:
    order: float | None
    exact: bool
    samples: tuple[tuple[float, float], ...]  # (dx, L1 error)


def convergence_order(
    case: Callable[[int], tuple[float, float]], resolutions: Sequence[int]
) -> ConvergenceResult:
    """Observed order: least-squares slope of log(error) vs log(dx).

    ``case`` runs the scheme at one resolution against an exact solution
    and returns (dx, L1 error); the dt scaling policy lives inside it.
    Zero errors at every resolution are reported as exact instead of a
    slope.
    """
    if len(resolutions) < 3:
        raise ValueError("need at least 3 resolutions")
    samples = tuple(case(n) for n in resolutions)
    errors = np.array([err for _, err in samples])
    if np.all(errors < 1e-14):
        return ConvergenceResult(order=None, exact=True, samples=samples)
    dxs = np.array([dx for dx, _ in samples])
    slope, _ = np.polyfit(np.log(dxs), np.log(errors), 1)
    return ConvergenceResult(order=float(slope), exact=False, samples=samples)


def periodized_gaussian(
    x: np.ndarray, center: float, t: float, D: float, length: float, images: int = 24
) -> np.ndarray:
    """Exact periodic heat kernel evolution of a Dirac: wrapped Gaussian."""
    acc = np.zeros_like(x, dtype=float)
    for k in range(-images, images + 1):
        acc += np.exp(-((x - center + k * length) ** 2) / (4.0 * D * t))
    return acc / math.sqrt(4.0 * math.pi * D * t)


def heat_convergence_case(N_x: int, D: float = 1.0) -> tuple[float, float]:
    """Diffusion-only manufactured test against the wrapped Gaussian.

    dt is proportional to dx^2, so the observed order isolates the spatial
    discretization (second order for the centered implicit diffusion).
    """
    grid = Grid1D.periodic(N_x)
    x = grid.centers()
    t0, horizon = 0.02, 0.01
    rho = Field1D(grid, periodized_gaussian(x, 0.5, t0, D, grid.length))
    steps = max(1, math.ceil(horizon / (0.25 * grid.dx * grid.dx)))
    dt = horizon / steps
    still = FaceVelocities1D.constant(0.0, N_x)
    for _ in range(steps):
        rho = step_periodic(rho, still, dt, D=D)
    exact = periodized_gaussian(x, 0.5, t0 + horizon, D, grid.length)
    err = float(np.sum(np.abs(rho.values - exact)) * grid.dx)
    return grid.dx, err


def advection_convergence_case(
    N_x: int, u0: float = 0.5, D: float = 1.0
) -> tuple[float, float]:
    """Constant-velocity advection-diffusion against the shifted kernel.

    dt is proportional to dx; the upwind flux limits the observed order to
    one.
    """
    grid = Grid1D.periodic(N_x)
    x = grid.centers()
    t0, horizon = 0.02, 0.1
    rho = Field1D(grid, periodized_gaussian(x, 0.5, t0, D, grid.length))
    steps = max(1, math.ceil(horizon / (0.5 * grid.dx / abs(u0))))
    dt = horizon / steps
    u = FaceVelocities1D.constant(u0, N_x)
    for _ in range(steps):
        rho = step_periodic(rho, u, dt, D=D)
    center = 0.5 + u0 * horizon
    exact = periodized_gaussian(x, center, t0 + horizon, D, grid.length)
    err = float(np.sum(np.abs(rho.values - exact)) * grid.dx)
    return grid.dx, err
