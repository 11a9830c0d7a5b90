"""Grids, fields and model parameters shared by all schemes.

Geometry conventions:

- periodic 1D interval of a given length (cell centers at j*dx, 1-based j,
  so the last center is identified with 0);
- bounded 1D interval [0, L] (cell centers at (j - 1/2)*dx, faces at 0 and L);
- bounded-periodic 2D rectangle [0, r] x (circle of length 2*pi*r), bounded
  in x with the active membrane at x = r, periodic in y.

All fields are cell-centered. 2D fields are stored as (N_x, N_y) arrays;
row j-1 holds the cells at depth x_j, so ``values.ravel()`` reproduces the
1-based linear ordering k + (j-1)*N_y used by the linear solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

RNG_ALGORITHM = "numpy-PCG64"  # recorded in run metadata for reproducibility


@dataclass(frozen=True)
class Params:
    """Physical constants of the polarisation models.

    S may be a scalar or a per-boundary-node array (pheromone modulation
    along the membrane); array length must equal N_y of the grid in use,
    which is checked at the point of use.
    """

    D: float = 1.0
    chi: float = 1.0
    k_on: float = 1.0
    k_off: float = 1.0
    S: Union[float, np.ndarray] = 1.0
    alpha: float = 0.1
    r: float = 1.0
    M: float = 1.0

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError(f"D must be > 0, got {self.D}")
        if self.chi < 0:
            raise ValueError(f"chi must be >= 0, got {self.chi}")
        if self.k_on < 0:
            raise ValueError(f"k_on must be >= 0, got {self.k_on}")
        if not self.k_off > 0:
            raise ValueError(f"k_off must be > 0, got {self.k_off}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.r > 0:
            raise ValueError(f"r must be > 0, got {self.r}")
        if not self.M > 0:
            raise ValueError(f"M must be > 0, got {self.M}")
        S = self.S
        if isinstance(S, np.ndarray):
            if S.ndim != 1:
                raise ValueError("array S must be one-dimensional")
            if np.any(S < 0):
                raise ValueError("S must be >= 0 elementwise")
        elif S < 0:
            raise ValueError(f"S must be >= 0, got {S}")

    def s_values(self, n_y: int) -> np.ndarray:
        """S broadcast to the N_y boundary nodes (validates array length)."""
        if isinstance(self.S, np.ndarray):
            if len(self.S) != n_y:
                raise ValueError(
                    f"S array has length {len(self.S)}, expected N_y={n_y}"
                )
            return self.S.astype(float)
        return np.full(n_y, float(self.S))

    def s_scalar(self) -> float:
        if isinstance(self.S, np.ndarray):
            raise ValueError("this model requires a scalar S")
        return float(self.S)


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1D grid, periodic or bounded."""

    kind: str  # "periodic" | "bounded"
    N_x: int
    dx: float
    length: float

    @staticmethod
    def periodic(N_x: int, length: float = 1.0) -> "Grid1D":
        if N_x < 3:
            raise ValueError(f"N_x must be >= 3, got {N_x}")
        if not length > 0:
            raise ValueError(f"length must be > 0, got {length}")
        return Grid1D("periodic", N_x, length / N_x, length)

    @staticmethod
    def bounded(N_x: int, length: float) -> "Grid1D":
        if N_x < 3:
            raise ValueError(f"N_x must be >= 3, got {N_x}")
        if not length > 0:
            raise ValueError(f"length must be > 0, got {length}")
        return Grid1D("bounded", N_x, length / N_x, length)

    def centers(self) -> np.ndarray:
        j = np.arange(1, self.N_x + 1, dtype=float)
        if self.kind == "periodic":
            return j * self.dx
        return (j - 0.5) * self.dx  # faces sit exactly at 0 and L


@dataclass(frozen=True)
class Grid2D:
    """Bounded-periodic rectangle: x in [0, r] (wall at x=r), y periodic.

    ``build_grid_2d`` fixes dy = 2*pi*r / N_y; tests may construct
    instances with custom spacings directly (e.g. isotropic dx = dy).
    """

    N_x: int
    N_y: int
    dx: float
    dy: float
    r: float

    def x_centers(self) -> np.ndarray:
        return (np.arange(1, self.N_x + 1) - 0.5) * self.dx

    def y_centers(self) -> np.ndarray:
        return np.arange(1, self.N_y + 1, dtype=float) * self.dy

    @property
    def n_cells(self) -> int:
        return self.N_x * self.N_y

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy


def build_grid_2d(r: float, N_x: int, N_y: int) -> Grid2D:
    """Grid for the rectangle [0, r] x (circle of circumference 2*pi*r)."""
    if not r > 0:
        raise ValueError(f"r must be > 0, got {r}")
    if N_x < 3:
        raise ValueError(f"N_x must be >= 3, got {N_x}")
    if N_y < 3:
        raise ValueError(f"N_y must be >= 3, got {N_y}")
    return Grid2D(N_x=N_x, N_y=N_y, dx=r / N_x, dy=2.0 * math.pi * r / N_y, r=r)


def flatten_index(j: int, k: int, N_y: int) -> int:
    """1-based linear index of cell (j, k): k + (j-1)*N_y."""
    if j < 1:
        raise ValueError(f"j must be >= 1, got {j}")
    if not 1 <= k <= N_y:
        raise ValueError(f"k must be in [1, {N_y}], got {k}")
    return k + (j - 1) * N_y


@dataclass
class Field1D:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.N_x,):
            raise ValueError(
                f"values shape {self.values.shape} does not match grid "
                f"({self.grid.N_x},)"
            )

    def copy(self) -> "Field1D":
        return Field1D(self.grid, self.values.copy())

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.dx)


@dataclass
class Field2D:
    grid: Grid2D
    values: np.ndarray  # shape (N_x, N_y)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.N_x, self.grid.N_y):
            raise ValueError(
                f"values shape {self.values.shape} does not match grid "
                f"({self.grid.N_x}, {self.grid.N_y})"
            )

    def copy(self) -> "Field2D":
        return Field2D(self.grid, self.values.copy())

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)

    def ravel(self) -> np.ndarray:
        """Linear vector in the 1-based ordering k + (j-1)*N_y."""
        return self.values.ravel()


@dataclass
class BoundaryField:
    """Membrane marker concentration: one value per boundary node.

    A single entry in the 1D half-line models (the membrane is a point),
    N_y entries along the wall x = r in 2D and on the reduced circle.
    """

    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))

    @property
    def scalar(self) -> float:
        if self.values.shape != (1,):
            raise ValueError("boundary field is not a single point value")
        return float(self.values[0])

    def copy(self) -> "BoundaryField":
        return BoundaryField(self.values.copy())


@dataclass
class SimState:
    """Complete state of one simulation at a moment in time."""

    rho: Union[Field1D, Field2D]
    mu: BoundaryField | None = None
    c: Field2D | None = None
    t: float = 0.0
    step: int = 0
    seed_info: dict = field(default_factory=dict)


def seeded_random_initial(
    grid,
    params: Params,
    eps: float,
    seed: int,
    with_boundary: bool = True,
    mu_fraction: float | None = None,
) -> SimState:
    """Uniform background with multiplicative noise, rescaled to mass M.

    The bulk/boundary mass split defaults to the exchange equilibrium
    mu = (k_on / k_off) * rho, i.e. fractions proportional to |domain| and
    (k_on / k_off) * |boundary|; ``mu_fraction`` overrides the boundary
    share.  Noise is (1 + eps * xi) with xi i.i.d. uniform on [-1, 1] from
    a seeded PCG64 generator, after which one common factor restores the
    total mass exactly.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must be in [0, 1), got {eps}")
    rng = np.random.default_rng(seed)
    seed_info = {"algorithm": RNG_ALGORITHM, "seed": seed, "eps": eps}

    if isinstance(grid, Grid2D):
        domain = grid.r * 2.0 * math.pi * grid.r
        boundary = 2.0 * math.pi * grid.r
        cell = grid.cell_area
        node = grid.dy
        shape = (grid.N_x, grid.N_y)
        n_nodes = grid.N_y
    elif isinstance(grid, Grid1D):
        domain = grid.length
        boundary = 1.0  # point membrane
        cell = grid.dx
        node = 1.0
        shape = (grid.N_x,)
        n_nodes = 1
        if grid.kind == "periodic":
            with_boundary = False
    else:
        raise TypeError(f"unsupported grid type {type(grid)!r}")

    if with_boundary:
        if mu_fraction is None:
            ratio = params.k_on / params.k_off
            mu_fraction = ratio * boundary / (domain + ratio * boundary)
        if not 0.0 <= mu_fraction < 1.0:
            raise ValueError(f"mu_fraction must be in [0, 1), got {mu_fraction}")
    else:
        mu_fraction = 0.0

    rho_bar = params.M * (1.0 - mu_fraction) / domain
    rho = rho_bar * (1.0 + eps * rng.uniform(-1.0, 1.0, size=shape))
    mu = None
    mass = rho.sum() * cell
    if with_boundary:
        mu_bar = params.M * mu_fraction / boundary
        mu_vals = mu_bar * (1.0 + eps * rng.uniform(-1.0, 1.0, size=n_nodes))
        mass += mu_vals.sum() * node

    factor = params.M / mass
    rho *= factor
    if with_boundary:
        mu_vals *= factor
        mu = BoundaryField(mu_vals)

    if isinstance(grid, Grid2D):
        rho_field = Field2D(grid, rho)
    else:
        rho_field = Field1D(grid, rho)
    return SimState(rho=rho_field, mu=mu, t=0.0, step=0, seed_info=seed_info)
