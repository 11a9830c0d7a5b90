"""Reduced boundary model: all bulk mass collapsed onto the membrane.

When the density concentrates on the wall, its line density nu(t, y) obeys
a 1D diffusion equation with a nonlocal drift given by the Hilbert
transform of nu itself (the tangential velocity induced through the
harmonic potential), with the membrane concentration slaved as
mu = (k_on/k_off) * nu.  On an infinite line the drift overwhelms the
diffusion exactly when the total mass exceeds 2*pi*D*k_off/(S*chi*k_on);
on the periodic circle used here that value is an order-of-magnitude guide
only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Field1D, Grid1D, Params
from .scheme1d import (
    DEFAULT_OVERFLOW_GUARD,
    BlowUpDetected,
    FaceVelocities1D,
    step_periodic,
)


def heuristic_critical_mass(params: Params) -> float:
    """Closed-form mass threshold 2*pi*D*k_off / (S*chi*k_on)."""
    s = params.s_scalar()
    denom = s * params.chi * params.k_on
    if denom <= 0:
        raise ValueError("S, chi and k_on must all be positive")
    return 2.0 * math.pi * params.D * params.k_off / denom


def hilbert_periodic(f: np.ndarray, dy: float) -> np.ndarray:
    """Periodic Hilbert transform (conjugate function) of grid samples.

    Fourier multiplier -i*sign(m); the mean is annihilated.  The transform
    is scale-invariant, so dy only validates the call.  For even lengths
    the Nyquist mode is annihilated as well: any real skew-adjoint
    translation-invariant operator must send it to zero.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or len(f) < 4:
        raise ValueError("need a 1D sample array of length >= 4")
    if not dy > 0:
        raise ValueError(f"dy must be > 0, got {dy}")
    n = len(f)
    spec = np.fft.rfft(f)
    mult = np.full(len(spec), -1j)
    mult[0] = 0.0
    if n % 2 == 0:
        mult[-1] = 0.0
    return np.fft.irfft(spec * mult, n=n)


@dataclass
class ReducedState:
    """Boundary line density on the periodic circle of length 2*pi*r."""

    nu: Field1D
    t: float = 0.0
    step: int = 0

    def mass(self) -> float:
        return self.nu.mass()


def reduced_grid(params: Params, N_y: int) -> Grid1D:
    return Grid1D.periodic(N_y, 2.0 * math.pi * params.r)


def reduced_face_velocities(nu: Field1D, params: Params) -> FaceVelocities1D:
    """Drift -chi*S*(k_on/k_off)*H(nu), averaged onto the faces."""
    s = params.s_scalar()
    h = hilbert_periodic(nu.values, nu.grid.dx)
    node_vel = -params.chi * s * (params.k_on / params.k_off) * h
    return FaceVelocities1D(0.5 * (node_vel + np.roll(node_vel, -1)))


def step_reduced(
    state: ReducedState,
    dt: float,
    params: Params,
    overflow_guard: float = DEFAULT_OVERFLOW_GUARD,
) -> ReducedState:
    """One semi-implicit step of the nonlocal boundary model.

    Reuses the periodic 1D machinery with the Hilbert drift as the face
    velocity field; with chi = 0 this is exactly the periodic heat step.
    """
    peak = float(np.max(state.nu.values))
    if peak > overflow_guard:
        raise BlowUpDetected(peak, overflow_guard)
    u = reduced_face_velocities(state.nu, params)
    nu_new = step_periodic(state.nu, u, dt, D=params.D, chi=1.0)
    return ReducedState(nu=nu_new, t=state.t + dt, step=state.step + 1)
