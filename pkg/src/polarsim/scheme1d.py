"""Semi-implicit finite-volume steppers on 1D grids.

Three models share the same machinery (implicit diffusion, explicit upwind
advection, conservative flux form):

- periodic advection-diffusion with a prescribed face velocity field;
- the half-line model whose advection speed is the wall density itself,
  truncated to [0, L] with zero total flux at both ends;
- the half-line model with dynamical exchange: a scalar membrane
  concentration mu absorbs/releases mass through the wall at x = 0.

Every stepper conserves its discrete mass (sum(rho)*dx, plus mu for the
exchange model) exactly up to the linear-solver residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BoundaryField, Field1D, Params, SimState
from .linalg import assemble_heat_bounded, assemble_heat_periodic, solve_spd

CFL_SAFETY = 0.9
DEFAULT_OVERFLOW_GUARD = 1e6


class CflViolation(RuntimeError):
    """Explicit advection step would exceed the stability bound."""

    def __init__(self, max_speed: float, bound: float):
        super().__init__(
            f"CFL violated: max speed {max_speed:.6g} >= dx/dt = {bound:.6g}"
        )
        self.max_speed = max_speed
        self.bound = bound


class PositivityStepError(RuntimeError):
    """Explicit exchange update would break nonnegativity (dt*k_off > 1)."""


class BlowUpDetected(RuntimeError):
    """Wall density exceeded the overflow guard; run should stop."""

    def __init__(self, peak: float, guard: float):
        super().__init__(f"wall density {peak:.6g} exceeded guard {guard:.6g}")
        self.peak = peak
        self.guard = guard


@dataclass
class FaceVelocities1D:
    """Velocities at the periodic cell faces.

    ``values[i]`` is the velocity at the face between cells i and i+1
    (0-based, wrapping), i.e. the 1-based u_{j+1/2} for j = i+1.  The face
    shared by the last and first cells is stored once, so the periodic
    identification u_{1/2} = u_{N_x+1/2} holds by construction.
    """

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or len(self.values) < 3:
            raise ValueError("face velocities need one entry per cell (>= 3)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("face velocities must be finite")

    @staticmethod
    def constant(u: float, N_x: int) -> "FaceVelocities1D":
        return FaceVelocities1D(np.full(N_x, float(u)))

    @staticmethod
    def from_profile(fn, grid) -> "FaceVelocities1D":
        faces = (np.arange(1, grid.N_x + 1) + 0.5) * grid.dx
        return FaceVelocities1D(fn(np.mod(faces, grid.length)))

    def max_speed(self) -> float:
        return float(np.max(np.abs(self.values)))


def upwind_flux(u: float, x_minus: float, x_plus: float) -> float:
    """Advective flux through a face: upstream value times velocity."""
    if u > 0:
        return u * x_minus
    if u < 0:
        return u * x_plus
    return 0.0


def _upwind_faces(u: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return np.maximum(u, 0.0) * left + np.minimum(u, 0.0) * right


def _advection_div_periodic(u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Per-cell A_up(right face) - A_up(left face), periodic wrap."""
    flux_right = _upwind_faces(u, rho, np.roll(rho, -1))
    return flux_right - np.roll(flux_right, 1)


def _advection_div_bounded(u: float, rho: np.ndarray) -> np.ndarray:
    """Interior upwind flux differences; boundary faces carry none.

    The total flux through the end faces is prescribed separately (zero or
    the exchange term), so no advective contribution belongs there.
    """
    flux = _upwind_faces(np.full(len(rho) - 1, u), rho[:-1], rho[1:])
    div = np.zeros_like(rho)
    div[:-1] += flux
    div[1:] -= flux
    return div


def check_cfl(u: FaceVelocities1D, dx: float, dt: float) -> tuple[bool, float]:
    """Stability check max|u| < dx/dt; suggests a 0.9-safety step size."""
    m = u.max_speed()
    ok = m < dx / dt
    suggested = CFL_SAFETY * dx / m if m > 0 else math.inf
    return ok, suggested


def assemble_advection_periodic(
    u: FaceVelocities1D, dx: float, dt: float
) -> np.ndarray:
    """Explicit advection matrix B, scaled like the heat matrix.

    B * (dt/dx^2) applied to rho subtracts the upwind flux divergence from
    the identity; its columns each sum to dx^2/dt, which is the discrete
    statement of mass conservation.
    """
    n = len(u.values)
    vr = u.values
    vl = np.roll(vr, 1)
    B = np.zeros((n, n))
    idx = np.arange(n)
    B[idx, idx] = dx * dx / dt - dx * np.maximum(vr, 0.0) + dx * np.minimum(vl, 0.0)
    B[idx, (idx + 1) % n] = -dx * np.minimum(vr, 0.0)
    B[idx, (idx - 1) % n] = dx * np.maximum(vl, 0.0)
    return B


def step_periodic(
    rho: Field1D,
    u: FaceVelocities1D,
    dt: float,
    D: float = 1.0,
    chi: float = 1.0,
) -> Field1D:
    """One semi-implicit step of periodic advection-diffusion."""
    grid = rho.grid
    if grid.kind != "periodic":
        raise ValueError("step_periodic requires a periodic grid")
    if len(u.values) != grid.N_x:
        raise ValueError("face velocity count does not match the grid")
    speed = chi * u.max_speed()
    if speed >= grid.dx / dt:
        raise CflViolation(speed, grid.dx / dt)
    A = assemble_heat_periodic(grid.N_x, grid.dx, D * dt)
    rhs = A.shift * rho.values - (chi / D) * grid.dx * _advection_div_periodic(
        u.values, rho.values
    )
    x, _ = solve_spd(A, rhs)
    return Field1D(grid, x)


def step_simplified_halfline(
    rho: Field1D,
    dt: float,
    overflow_guard: float = DEFAULT_OVERFLOW_GUARD,
) -> Field1D:
    """One step of the self-advecting half-line model on [0, L].

    The advection speed is spatially constant, -rho(0) (approximated by
    the first cell value); both end faces carry zero total flux, so the
    wall's diffusive and advective fluxes cancel by construction and mass
    is conserved.
    """
    grid = rho.grid
    if grid.kind != "bounded":
        raise ValueError("half-line steppers require a bounded grid")
    wall = float(rho.values[0])
    if wall > overflow_guard:
        raise BlowUpDetected(wall, overflow_guard)
    u = -wall
    if abs(u) >= grid.dx / dt:
        raise CflViolation(abs(u), grid.dx / dt)
    A = assemble_heat_bounded(grid.N_x, grid.dx, dt)
    rhs = A.shift * rho.values - grid.dx * _advection_div_bounded(u, rho.values)
    x, _ = solve_spd(A, rhs)
    return Field1D(grid, x)


def step_exchange_halfline(state: SimState, dt: float, params: Params) -> SimState:
    """One step of the half-line model with membrane exchange at x = 0.

    Order matters for exact conservation: mu is advanced first by explicit
    Euler, then the rho step prescribes the wall's total flux as
    (mu_new - mu_old)/dt, so sum(rho)*dx + mu is invariant.
    """
    rho = state.rho
    grid = rho.grid
    if grid.kind != "bounded":
        raise ValueError("half-line steppers require a bounded grid")
    if dt * params.k_off > 1.0:
        raise PositivityStepError(
            f"dt*k_off = {dt * params.k_off:.6g} > 1 breaks mu positivity"
        )
    mu_old = state.mu.scalar
    wall_rho = float(rho.values[0])
    mu_new = mu_old + dt * (params.k_on * wall_rho - params.k_off * mu_old)

    u = -mu_old
    speed = params.chi * abs(u)
    if speed >= grid.dx / dt:
        raise CflViolation(speed, grid.dx / dt)
    D, chi = params.D, params.chi
    A = assemble_heat_bounded(grid.N_x, grid.dx, D * dt)
    rhs = A.shift * rho.values - (chi / D) * grid.dx * _advection_div_bounded(
        u, rho.values
    )
    rhs[0] -= (grid.dx / D) * (mu_new - mu_old) / dt
    x, _ = solve_spd(A, rhs)
    return SimState(
        rho=Field1D(grid, x),
        mu=BoundaryField([mu_new]),
        t=state.t + dt,
        step=state.step + 1,
        seed_info=state.seed_info,
    )
