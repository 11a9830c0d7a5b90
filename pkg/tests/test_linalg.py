import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polarsim.core import build_grid_2d, Grid2D
from polarsim.linalg import (
    SolveFailure,
    assemble_diffusion_2d,
    assemble_heat_bounded,
    assemble_heat_periodic,
    assemble_screened_2d,
    dump_coo,
    solve_spd,
)


def dense_gaussian_elimination(A, b):
    """Independent dense solver: textbook elimination with partial pivoting."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = len(b)
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(A[col:, col])))
        if pivot != col:
            A[[col, pivot]] = A[[pivot, col]]
            b[[col, pivot]] = b[[pivot, col]]
        for row in range(col + 1, n):
            m = A[row, col] / A[col, col]
            A[row, col:] -= m * A[col, col:]
            b[row] -= m * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - A[row, row + 1:] @ x[row + 1:]) / A[row, row]
    return x


class TestHeatPeriodic:
    def test_pattern_n3(self):
        A = assemble_heat_periodic(3, 1.0, 1.0)
        expected = np.array([[3, -1, -1], [-1, 3, -1], [-1, -1, 3]], dtype=float)
        assert np.array_equal(A.toarray(), expected)

    def test_row_sums(self):
        A = assemble_heat_periodic(6, 0.5, 0.2)
        sums = A.toarray().sum(axis=1)
        assert np.allclose(sums, 0.25 / 0.2, rtol=1e-15)

    def test_diagonal_example(self):
        A = assemble_heat_bounded(4, 0.5, 0.125).toarray()
        A_per = assemble_heat_periodic(4, 0.5, 0.125).toarray()
        assert np.allclose(np.diag(A_per), 4.0)
        # bounded variant drops one coupling at each end
        assert A[0, 0] == pytest.approx(3.0)
        assert A[1, 1] == pytest.approx(4.0)

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            assemble_heat_periodic(2, 1.0, 1.0)
        with pytest.raises(ValueError):
            assemble_heat_periodic(4, 0.0, 1.0)
        with pytest.raises(ValueError):
            assemble_heat_periodic(4, 1.0, 0.0)


def dense_flux_stencil_2d(grid: Grid2D, shift: float) -> np.ndarray:
    """Direct per-cell assembly from flux balances (independent oracle)."""
    n = grid.n_cells
    A = np.zeros((n, n))
    w = (grid.dx / grid.dy) ** 2

    def idx(j, k):
        return (k % grid.N_y) + j * grid.N_y

    for j in range(grid.N_x):
        for k in range(grid.N_y):
            i = idx(j, k)
            A[i, i] += shift
            if j > 0:
                A[i, i] += 1.0
                A[i, idx(j - 1, k)] -= 1.0
            if j < grid.N_x - 1:
                A[i, i] += 1.0
                A[i, idx(j + 1, k)] -= 1.0
            A[i, i] += 2.0 * w
            A[i, idx(j, k - 1)] -= w
            A[i, idx(j, k + 1)] -= w
    return A


class TestDiffusion2D:
    def test_matches_dense_flux_oracle(self):
        grid = Grid2D(N_x=2, N_y=3, dx=1.0, dy=1.0, r=2.0)
        A = assemble_diffusion_2d(grid, 1.0)
        oracle = dense_flux_stencil_2d(grid, shift=1.0)
        assert np.allclose(A.toarray(), oracle, atol=0, rtol=0)

    def test_block_pattern_isotropic(self):
        # first/last diagonal blocks add one identity, interior two
        grid = Grid2D(N_x=3, N_y=3, dx=0.5, dy=0.5, r=1.5)
        dt = 0.1
        A = assemble_diffusion_2d(grid, dt).toarray()
        heat_block = assemble_heat_periodic(3, 0.5, dt).toarray()
        eye = np.eye(3)
        assert np.allclose(A[:3, :3], heat_block + eye)
        assert np.allclose(A[3:6, 3:6], heat_block + 2 * eye)
        assert np.allclose(A[6:, 6:], heat_block + eye)
        assert np.allclose(A[:3, 3:6], -eye)
        assert np.allclose(A[3:6, 6:], -eye)
        assert np.allclose(A[:3, 6:], 0.0)

    def test_anisotropic_grid_supported(self):
        grid = build_grid_2d(1.0, 4, 4)  # dy = pi/2 != dx
        A = assemble_diffusion_2d(grid, 1e-2)
        v = np.ones(grid.n_cells)
        assert np.allclose(A.matrix @ v, A.shift * v, rtol=1e-13)

    def test_constant_vector_row_sums(self):
        grid = Grid2D(N_x=4, N_y=4, dx=0.25, dy=0.25, r=1.0)
        A = assemble_diffusion_2d(grid, 0.01)
        v = np.full(grid.n_cells, 3.7)
        assert np.allclose(A.matrix @ v, A.shift * v, rtol=1e-13)


class TestScreened2D:
    def test_interior_diagonal_value(self):
        grid = Grid2D(N_x=3, N_y=3, dx=1.0, dy=1.0, r=3.0)
        A = assemble_screened_2d(grid, 1.0).toarray()
        # interior block diagonal: 2 + alpha*dx^2 + 2
        assert A[4, 4] == pytest.approx(5.0)

    def test_alpha_zero_rejected(self):
        grid = Grid2D(N_x=3, N_y=3, dx=1.0, dy=1.0, r=3.0)
        with pytest.raises(ValueError):
            assemble_screened_2d(grid, 0.0)

    def test_constant_vector(self):
        grid = build_grid_2d(1.0, 4, 5)
        A = assemble_screened_2d(grid, 0.3)
        v = np.full(grid.n_cells, 2.0)
        expected = 0.3 * grid.dx**2 * v
        assert np.allclose(A.matrix @ v, expected, rtol=1e-13)

    def test_spd_small_grids(self):
        for (nx, ny) in [(3, 3), (4, 5)]:
            grid = Grid2D(N_x=nx, N_y=ny, dx=0.5, dy=0.5, r=nx * 0.5)
            A = assemble_screened_2d(grid, 0.2)
            eigs = np.linalg.eigvalsh(A.toarray())
            assert eigs.min() > 0


class TestSpdInvariants:
    @pytest.mark.parametrize(
        "make",
        [
            lambda: assemble_heat_periodic(7, 0.3, 0.05),
            lambda: assemble_heat_bounded(7, 0.3, 0.05),
            lambda: assemble_diffusion_2d(
                Grid2D(N_x=4, N_y=4, dx=0.25, dy=0.25, r=1.0), 0.02
            ),
            lambda: assemble_screened_2d(build_grid_2d(1.0, 4, 6), 0.4),
        ],
    )
    def test_symmetric_and_positive(self, make):
        A = make().toarray()
        assert np.max(np.abs(A - A.T)) == 0.0
        assert np.linalg.eigvalsh(A).min() > 0

    @pytest.mark.parametrize(
        "make",
        [
            lambda: assemble_heat_periodic(6, 0.2, 0.1),
            lambda: assemble_diffusion_2d(build_grid_2d(1.0, 4, 4), 0.05),
            lambda: assemble_screened_2d(build_grid_2d(1.0, 4, 4), 0.7),
        ],
    )
    def test_flux_part_annihilates_totals(self, make):
        # columns of (A - shift*I) sum to zero: discrete divergence theorem
        A = make()
        v = np.random.default_rng(0).normal(size=A.n)
        flux_part = A.matrix @ v - A.shift * v
        assert abs(flux_part.sum()) < 1e-10 * np.abs(v).sum()


class TestSolve:
    def test_constant_solution(self):
        A = assemble_heat_periodic(3, 1.0, 1.0)
        x, report = solve_spd(A, np.ones(3))
        assert np.allclose(x, 1.0, rtol=1e-14)
        assert report.residual <= 1e-12

    def test_zero_rhs(self):
        A = assemble_heat_periodic(5, 0.2, 0.1)
        x, report = solve_spd(A, np.zeros(5))
        assert np.array_equal(x, np.zeros(5))
        assert report.residual == 0.0

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_matches_dense_elimination(self, seed):
        rng = np.random.default_rng(seed)
        A = assemble_heat_bounded(12, 0.4, 0.07)
        b = rng.normal(size=12)
        x, _ = solve_spd(A, b)
        oracle = dense_gaussian_elimination(A.toarray(), b)
        assert np.allclose(x, oracle, atol=1e-10, rtol=1e-10)

    def test_multiply_back(self):
        grid = build_grid_2d(1.0, 6, 8)
        A = assemble_screened_2d(grid, 0.15)
        b = np.sin(np.arange(A.n, dtype=float))
        x, report = solve_spd(A, b, tol=1e-10)
        assert np.linalg.norm(A.matrix @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_shape_guard(self):
        A = assemble_heat_periodic(4, 1.0, 1.0)
        with pytest.raises(ValueError):
            solve_spd(A, np.ones(5))

    def test_solve_failure_carries_report(self):
        # an unreachable tolerance must fail loudly, with the report attached
        A = assemble_screened_2d(build_grid_2d(1.0, 8, 8), 1e-4)
        b = np.ones(A.n)
        with pytest.raises(SolveFailure) as info:
            solve_spd(A, b, tol=1e-18)
        assert info.value.report.residual > 1e-18
        assert info.value.report.method == "sparse-lu"


def test_dump_coo_roundtrip():
    A = assemble_heat_periodic(3, 1.0, 1.0)
    text = dump_coo(A)
    rows = [line.split() for line in text.splitlines() if not line.startswith("#")]
    dense = np.zeros((3, 3))
    for i, j, v in rows:
        dense[int(i) - 1, int(j) - 1] = float(v)
    assert np.array_equal(dense, A.toarray())
