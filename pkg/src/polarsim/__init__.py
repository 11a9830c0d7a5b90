"""Finite-volume simulation of cell-polarisation convection-diffusion models."""

from .core import (
    BoundaryField,
    Field1D,
    Field2D,
    Grid1D,
    Grid2D,
    Params,
    SimState,
    build_grid_2d,
    flatten_index,
    seeded_random_initial,
)
from .diagnostics import (
    RunVerdict,
    Thresholds,
    classify_run,
    convergence_order,
    detect_steady,
    estimate_critical_mass,
    polarisation_index,
    total_mass,
)
from .heuristic import (
    ReducedState,
    heuristic_critical_mass,
    hilbert_periodic,
    step_reduced,
)
from .linalg import (
    LinearSolveReport,
    SpdMatrix,
    assemble_diffusion_2d,
    assemble_heat_bounded,
    assemble_heat_periodic,
    assemble_screened_2d,
    solve_spd,
)
from .runner import simulate
from .scheme1d import (
    CflViolation,
    FaceVelocities1D,
    assemble_advection_periodic,
    check_cfl,
    step_exchange_halfline,
    step_periodic,
    step_simplified_halfline,
    upwind_flux,
)
from .scheme2d import (
    FaceVelocities2D,
    Potential2D,
    face_velocities,
    solve_potential,
    step_coupled,
    step_mu_2d,
    step_rho_2d,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
