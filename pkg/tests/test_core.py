import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polarsim.core import (
    BoundaryField,
    Field1D,
    Grid1D,
    Params,
    build_grid_2d,
    flatten_index,
    seeded_random_initial,
)


class TestParams:
    def test_defaults_valid(self):
        p = Params(M=1.0)
        assert p.D == 1.0 and p.k_off == 1.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"D": 0.0},
            {"D": -1.0},
            {"chi": -0.1},
            {"k_on": -1.0},
            {"k_off": 0.0},
            {"alpha": -0.5},
            {"r": 0.0},
            {"M": 0.0},
            {"S": -2.0},
        ],
    )
    def test_sign_constraints(self, kwargs):
        with pytest.raises(ValueError):
            Params(**{"M": 1.0, **kwargs})

    def test_array_s_length_checked_at_use(self):
        p = Params(M=1.0, S=np.ones(8))
        assert np.allclose(p.s_values(8), 1.0)
        with pytest.raises(ValueError):
            p.s_values(16)

    def test_array_s_rejected_where_scalar_needed(self):
        p = Params(M=1.0, S=np.ones(8))
        with pytest.raises(ValueError):
            p.s_scalar()


class TestGrids:
    def test_build_grid_2d_spacings(self):
        g = build_grid_2d(r=1.0, N_x=4, N_y=4)
        assert g.dx == 0.25
        assert g.dy == pytest.approx(math.pi / 2, abs=0)

    def test_build_grid_2d_rejects_small_counts(self):
        with pytest.raises(ValueError):
            build_grid_2d(r=1.0, N_x=3, N_y=2)
        with pytest.raises(ValueError):
            build_grid_2d(r=1.0, N_x=2, N_y=3)
        with pytest.raises(ValueError):
            build_grid_2d(r=-1.0, N_x=4, N_y=4)

    def test_build_grid_2d_example(self):
        g = build_grid_2d(r=2.0, N_x=8, N_y=16)
        assert g.dx == 0.25
        assert g.dy == pytest.approx(math.pi / 4, abs=0)

    @given(
        r=st.floats(0.1, 10.0),
        N_x=st.integers(3, 64),
        N_y=st.integers(3, 64),
    )
    def test_spacings_consistent(self, r, N_x, N_y):
        g = build_grid_2d(r, N_x, N_y)
        assert g.dx * N_x == pytest.approx(r, rel=1e-15)
        assert g.dy * N_y == pytest.approx(2 * math.pi * r, rel=1e-15)

    def test_grid1d_centers(self):
        g = Grid1D.periodic(4)
        assert np.allclose(g.centers(), [0.25, 0.5, 0.75, 1.0])
        b = Grid1D.bounded(4, 2.0)
        assert np.allclose(b.centers(), [0.25, 0.75, 1.25, 1.75])


class TestFlattenIndex:
    def test_paper_examples(self):
        assert flatten_index(1, 1, 4) == 1
        assert flatten_index(2, 3, 4) == 7
        assert flatten_index(3, 4, 4) == 12

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            flatten_index(0, 1, 4)
        with pytest.raises(ValueError):
            flatten_index(1, 0, 4)
        with pytest.raises(ValueError):
            flatten_index(1, 5, 4)

    @given(N_x=st.integers(1, 12), N_y=st.integers(1, 12))
    def test_bijection(self, N_x, N_y):
        seen = {
            flatten_index(j, k, N_y)
            for j in range(1, N_x + 1)
            for k in range(1, N_y + 1)
        }
        assert seen == set(range(1, N_x * N_y + 1))

    def test_matches_array_ravel(self):
        # row-major (N_x, N_y) storage reproduces the 1-based ordering
        g = build_grid_2d(1.0, 3, 5)
        arr = np.arange(g.N_x * g.N_y).reshape(g.N_x, g.N_y)
        flat = arr.ravel()
        for j in range(1, g.N_x + 1):
            for k in range(1, g.N_y + 1):
                assert flat[flatten_index(j, k, g.N_y) - 1] == arr[j - 1, k - 1]


class TestSeededInitial:
    def test_eps_zero_uniform(self):
        g = build_grid_2d(1.0, 8, 8)
        p = Params(M=5.0)
        state = seeded_random_initial(g, p, eps=0.0, seed=1)
        assert np.ptp(state.rho.values) == 0.0
        assert np.ptp(state.mu.values) == 0.0

    def test_same_seed_bit_identical(self):
        g = build_grid_2d(1.0, 8, 8)
        p = Params(M=5.0)
        a = seeded_random_initial(g, p, eps=0.3, seed=7)
        b = seeded_random_initial(g, p, eps=0.3, seed=7)
        assert np.array_equal(a.rho.values, b.rho.values)
        assert np.array_equal(a.mu.values, b.mu.values)

    def test_different_seed_differs(self):
        g = build_grid_2d(1.0, 8, 8)
        p = Params(M=5.0)
        a = seeded_random_initial(g, p, eps=0.3, seed=7)
        b = seeded_random_initial(g, p, eps=0.3, seed=8)
        assert not np.array_equal(a.rho.values, b.rho.values)

    @given(
        eps=st.floats(0.0, 0.9),
        seed=st.integers(0, 2**32 - 1),
        M=st.floats(0.01, 50.0),
    )
    @settings(max_examples=40)
    def test_mass_exact(self, eps, seed, M):
        g = build_grid_2d(1.0, 8, 16)
        p = Params(M=M)
        state = seeded_random_initial(g, p, eps=eps, seed=seed)
        mass = state.rho.values.sum() * g.cell_area + state.mu.values.sum() * g.dy
        assert mass == pytest.approx(M, rel=1e-13)

    def test_equilibrium_split(self):
        # mu_bar = (k_on/k_off) * rho_bar at t = 0
        g = build_grid_2d(1.0, 8, 8)
        p = Params(M=5.0, k_on=2.0, k_off=0.5)
        state = seeded_random_initial(g, p, eps=0.0, seed=0)
        rho_bar = state.rho.values.mean()
        mu_bar = state.mu.values.mean()
        assert mu_bar == pytest.approx((p.k_on / p.k_off) * rho_bar, rel=1e-12)

    def test_mu_fraction_override(self):
        g = build_grid_2d(1.0, 8, 8)
        p = Params(M=4.0)
        state = seeded_random_initial(g, p, eps=0.0, seed=0, mu_fraction=0.25)
        mu_mass = state.mu.values.sum() * g.dy
        assert mu_mass == pytest.approx(1.0, rel=1e-12)

    def test_1d_halfline_state(self):
        g = Grid1D.bounded(16, 10.0)
        p = Params(M=2.0)
        state = seeded_random_initial(g, p, eps=0.1, seed=3)
        mass = state.rho.mass() + state.mu.scalar
        assert mass == pytest.approx(2.0, rel=1e-13)

    def test_eps_out_of_range(self):
        g = Grid1D.periodic(8)
        with pytest.raises(ValueError):
            seeded_random_initial(g, Params(M=1.0), eps=1.0, seed=0)


def test_boundary_field_scalar_guard():
    b = BoundaryField([1.0, 2.0])
    with pytest.raises(ValueError):
        b.scalar


def test_field_shape_guard():
    g = Grid1D.periodic(8)
    with pytest.raises(ValueError):
        Field1D(g, np.zeros(7))
