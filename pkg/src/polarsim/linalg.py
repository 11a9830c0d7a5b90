"""Sparse SPD operators for the implicit steps, plus their solver.

All matrices follow the scaled convention of the schemes: the implicit
update (I - dt*D*Laplacian) is multiplied through by dx^2 / (D*dt), so the
heat matrices carry a diagonal ``2 + dx^2/dt`` and off-diagonal ``-1``
entries, and the screened operator carries ``alpha * dx^2`` on the
diagonal shift.  2D operators are assembled from the finite-volume flux
stencil, which supports dx != dy (y-couplings then carry -(dx/dy)^2); for
dx = dy they coincide entrywise with the block form built from the 1D
matrices.

Matrices are immutable after assembly and cache their LU factorization on
first solve; assembly functions are memoized so repeated steps at the same
(grid, dt) share one factorization.  Concurrent solves on a shared matrix
are safe once the factorization exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import Grid2D


class SolveFailure(RuntimeError):
    """Linear solve missed the requested tolerance."""

    def __init__(self, report: "LinearSolveReport"):
        super().__init__(
            f"linear solve residual {report.residual:.3e} above tolerance "
            f"(method {report.method})"
        )
        self.report = report


@dataclass(frozen=True)
class LinearSolveReport:
    residual: float
    iterations: int
    method: str


@dataclass(eq=False)
class SpdMatrix:
    """Sparse symmetric positive definite operator with a solve contract.

    ``shift`` is the zeroth-order diagonal coefficient (dx^2/dt for the
    heat/diffusion operators, alpha*dx^2 for the screened one); the
    remainder of the matrix is a pure flux stencil whose rows and columns
    sum to zero.
    """

    n: int
    matrix: sp.csc_matrix
    tag: str  # heat-1D | heat-1D-bounded | diffusion-2D | screened-2D
    shift: float
    _lu: object = field(default=None, repr=False)

    @property
    def lu(self):
        if self._lu is None:
            self._lu = spla.splu(self.matrix)
        return self._lu

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x


def _periodic_flux_stencil(n: int) -> sp.csr_matrix:
    """Tridiagonal [-1, 2, -1] with -1 corner couplings (periodic faces)."""
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    mat = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    mat[0, n - 1] = -1.0
    mat[n - 1, 0] = -1.0
    return mat.tocsr()


def _bounded_flux_stencil(n: int) -> sp.csr_matrix:
    """Tridiagonal [-1, 2, -1] with degree-1 end rows (zero-flux faces)."""
    main = 2.0 * np.ones(n)
    main[0] = 1.0
    main[n - 1] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


@lru_cache(maxsize=64)
def assemble_heat_periodic(N_x: int, dx: float, dt: float) -> SpdMatrix:
    """Implicit heat operator on the periodic 1D grid, scaled by dx^2/dt."""
    if N_x < 3:
        raise ValueError(f"N_x must be >= 3, got {N_x}")
    if not dx > 0:
        raise ValueError(f"dx must be > 0, got {dx}")
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    shift = dx * dx / dt
    mat = (_periodic_flux_stencil(N_x) + shift * sp.identity(N_x)).tocsc()
    return SpdMatrix(n=N_x, matrix=mat, tag="heat-1D", shift=shift)


@lru_cache(maxsize=64)
def assemble_heat_bounded(N_x: int, dx: float, dt: float) -> SpdMatrix:
    """Same scaling as the periodic operator but with zero-flux ends."""
    if N_x < 3:
        raise ValueError(f"N_x must be >= 3, got {N_x}")
    if not dx > 0:
        raise ValueError(f"dx must be > 0, got {dx}")
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    shift = dx * dx / dt
    mat = (_bounded_flux_stencil(N_x) + shift * sp.identity(N_x)).tocsc()
    return SpdMatrix(n=N_x, matrix=mat, tag="heat-1D-bounded", shift=shift)


def _stencil_2d(grid: Grid2D) -> sp.csr_matrix:
    """dx^2-scaled flux stencil: zero-flux in x, periodic in y.

    Cells are ordered k + (j-1)*N_y.  x-couplings are -1; y-couplings are
    -(dx/dy)^2, reducing to the isotropic block pattern when dx == dy.
    """
    w = (grid.dx / grid.dy) ** 2
    kx = _bounded_flux_stencil(grid.N_x)
    ky = _periodic_flux_stencil(grid.N_y)
    eye_x = sp.identity(grid.N_x, format="csr")
    eye_y = sp.identity(grid.N_y, format="csr")
    return sp.kron(kx, eye_y, format="csr") + w * sp.kron(eye_x, ky, format="csr")


@lru_cache(maxsize=64)
def assemble_diffusion_2d(grid: Grid2D, dt: float) -> SpdMatrix:
    """Implicit diffusion operator on the bounded-periodic rectangle."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    shift = grid.dx * grid.dx / dt
    mat = (_stencil_2d(grid) + shift * sp.identity(grid.n_cells)).tocsc()
    return SpdMatrix(n=grid.n_cells, matrix=mat, tag="diffusion-2D", shift=shift)


@lru_cache(maxsize=16)
def assemble_screened_2d(grid: Grid2D, alpha: float) -> SpdMatrix:
    """Operator for -laplace(c) + alpha*c with flux data entering the rhs.

    alpha = 0 is rejected: the pure-Neumann problem on the bounded
    direction is singular, which is why the degradation term exists.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    shift = alpha * grid.dx * grid.dx
    mat = (_stencil_2d(grid) + shift * sp.identity(grid.n_cells)).tocsc()
    return SpdMatrix(n=grid.n_cells, matrix=mat, tag="screened-2D", shift=shift)


def solve_spd(
    A: SpdMatrix, b: np.ndarray, tol: float = 1e-12
) -> tuple[np.ndarray, LinearSolveReport]:
    """Solve A x = b to relative residual <= tol (direct sparse LU).

    Deterministic for fixed inputs; raises SolveFailure (carrying the
    report) if the factorization cannot meet the tolerance.
    """
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    b = np.asarray(b, dtype=float)
    if b.shape != (A.n,):
        raise ValueError(f"b has shape {b.shape}, expected ({A.n},)")
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(A.n), LinearSolveReport(0.0, 0, "sparse-lu")
    x = A.lu.solve(b)
    refinements = 0
    residual_vec = A.matrix @ x - b
    residual = float(np.linalg.norm(residual_vec) / b_norm)
    while residual > tol and refinements < 3:
        # one pass of iterative refinement recovers the last digits
        x -= A.lu.solve(residual_vec)
        residual_vec = A.matrix @ x - b
        residual = float(np.linalg.norm(residual_vec) / b_norm)
        refinements += 1
    report = LinearSolveReport(
        residual=residual, iterations=refinements, method="sparse-lu"
    )
    if residual > tol:
        raise SolveFailure(report)
    return x, report


def dump_coo(A: SpdMatrix) -> str:
    """Matrix in 1-based (row, col, value) text form, for cross-checking."""
    coo = A.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"# spd-matrix tag={A.tag} n={A.n} shift={float(A.shift)!r}"]
    for i in order:
        lines.append(f"{coo.row[i] + 1} {coo.col[i] + 1} {float(coo.data[i])!r}")
    return "\n".join(lines) + "\n"
