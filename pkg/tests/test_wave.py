"""Tests for wave profiles, the linearized operator, and manifold distance."""

import numpy as np
import pytest
from scipy.linalg import expm

from kinklab.grid import Field, GridSpec
from kinklab.wave import (
    LinearizedOperator,
    WaveProfile,
    _leftmost_argmin,
    dist_to_manifold,
    fermi_coordinate,
    ode_residual,
    project_P,
    solve_wave,
    spectral_gap,
    wave_norm_sq,
)

# ||m'||^2 from the first integral m'^2 = n/(n+1) - m^2 + m^(2n+2)/(n+1),
# integrated dx = dm / m' over m in (-1, 1) with scipy.integrate.quad:
#     int_{-1}^{1} sqrt(n/(n+1) - m^2 + m^(2n+2)/(n+1)) dm
# For n = 1 this equals 2*sqrt(2)/3 exactly.
NORM_SQ_ORACLE = {
    1: 9.428090415820634e-01,
    2: 1.140518994451419e+00,
    3: 1.240879386081330e+00,
}


@pytest.fixture(scope="module")
def wave1(grid20):
    return solve_wave(1, grid20)


@pytest.fixture(scope="module")
def op1(wave1):
    return LinearizedOperator(wave1)


class TestSolveWave:
    def test_closed_form_n1(self, grid20, wave1):
        exact = np.tanh(grid20.x / np.sqrt(2.0))
        assert np.max(np.abs(wave1.m.values - exact)) == 0.0
        assert ode_residual(wave1) < 1e-10

    @pytest.mark.parametrize("n", [2, 3])
    def test_newton_residual(self, grid20, n):
        w = solve_wave(n, grid20)
        assert ode_residual(w) <= 1e-8

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_shape_invariants(self, grid20, n):
        w = solve_wave(n, grid20)
        m = w.m.values
        assert np.all(np.diff(m) > -1e-12)  # tails saturate at roundoff
        core = np.abs(grid20.x) <= 10.0
        assert np.all(np.diff(m[core]) > 0.0)
        assert abs(m[grid20.N // 2]) <= 1e-12  # m(0) = 0
        mirror = np.roll(m[::-1], 1)
        # index 0 (x = -L) reflects onto itself across the wrap; skip it
        assert np.max(np.abs((m + mirror)[1:])) <= 1e-10  # odd symmetry
        assert abs(m[0] + 1.0) <= 1e-8
        assert abs(m[-1] - 1.0) <= 1e-8

    def test_first_integral_identity_n2(self, grid20):
        # independent check: the conserved quantity of the profile equation
        w = solve_wave(2, grid20)
        m = w.m.values
        rhs = np.sqrt(np.clip(2.0 / 3.0 - m**2 + m**6 / 3.0, 0.0, None))
        assert np.max(np.abs(w.m_prime.values - rhs)) <= 1e-7

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_slope_at_origin(self, grid20, n):
        w = solve_wave(n, grid20)
        slope = w.m_prime.values[grid20.N // 2]
        assert abs(slope - np.sqrt(n / (n + 1.0))) <= 1e-10

    @pytest.mark.parametrize("bad", [0, -1, 1.5, "2"])
    def test_invalid_index_rejected(self, grid20, bad):
        with pytest.raises(ValueError):
            solve_wave(bad, grid20)

    def test_nonconvergence_reports_residual(self, grid20):
        with pytest.raises(RuntimeError, match="residual"):
            solve_wave(2, grid20, max_iter=1)


class TestNormAndProjection:
    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_norm_sq_oracle(self, grid20, n):
        w = solve_wave(n, grid20)
        assert abs(w.norm_sq - NORM_SQ_ORACLE[n]) <= 1e-9
        assert abs(wave_norm_sq(w) - w.norm_sq) == 0.0

    def test_norm_sq_closed_form_n1(self, wave1):
        assert abs(wave1.norm_sq - 2.0 * np.sqrt(2.0) / 3.0) <= 1e-7

    def test_norm_sq_resolution_stable(self, grid20, wave1):
        fine = solve_wave(1, GridSpec(grid20.L, 2 * grid20.N))
        assert abs(fine.norm_sq - wave1.norm_sq) < 1e-9

    def test_norm_sq_shift_invariant(self, wave1):
        assert abs(wave1.shifted(0.613).norm_sq - wave1.norm_sq) <= 1e-10

    def test_project_along_mprime(self, wave1):
        out = project_P(wave1, wave1.m_prime)
        want = np.sqrt(wave1.norm_sq) * wave1.m_prime.values
        assert np.max(np.abs(out.values - want)) <= 1e-12

    def test_project_kills_orthogonal(self, grid20, wave1):
        odd = Field(grid20, grid20.x * np.exp(-(grid20.x**2) / 8.0))
        assert project_P(wave1, odd).norm_sup() <= 1e-12

    def test_project_composition(self, grid20, wave1):
        f = Field(grid20, np.exp(-((grid20.x - 1.0) ** 2) / 3.0))
        once = project_P(wave1, f)
        twice = project_P(wave1, once)
        want = np.sqrt(wave1.norm_sq) * once.values
        assert np.max(np.abs(twice.values - want)) <= 1e-10

    @pytest.mark.parametrize("n", [1, 2])
    def test_orthogonality_invariants(self, grid20, n):
        w = solve_wave(n, grid20)
        dx = grid20.dx
        m, mp = w.m.values, w.m_prime.values
        assert abs(dx * np.sum(m * mp)) <= 1e-10
        assert abs(dx * np.sum(m ** (2 * n - 1) * mp)) <= 1e-10

    @pytest.mark.parametrize("n, rate", [(1, np.sqrt(2.0)), (2, 2.0)])
    def test_mprime_tail_decay(self, grid20, n, rate):
        # linearization at +-1 gives m' ~ exp(-sqrt(2n) x)
        w = solve_wave(n, grid20)
        mask = (grid20.x >= 5.0) & (grid20.x <= 12.0)
        fit = np.polyfit(grid20.x[mask], np.log(w.m_prime.values[mask]), 1)
        fitted = -fit[0]
        assert fitted > 0.0
        assert abs(fitted - rate) / rate <= 0.1


class TestLinearizedOperator:
    def test_symmetric(self, op1):
        assert np.max(np.abs(op1.matrix - op1.matrix.T)) <= 1e-10

    def test_translation_mode_in_kernel(self, wave1, op1):
        image = op1.apply(wave1.m_prime)
        assert image.norm_sup() <= 1e-6 * wave1.m_prime.norm_sup()

    def test_spectral_gap_n1(self, op1):
        # -Lap + 2 - 3 sech^2(x/sqrt(2)) has bound states at 0 and 3/2
        lam0, lam1 = spectral_gap(op1)
        assert abs(lam0) <= 1e-6
        assert abs(lam1 - 1.5) <= 1e-3

    def test_lowest_eigenvector_is_mprime(self, wave1, op1):
        _, vecs = op1.eigensystem()
        mp = wave1.m_prime.values / np.linalg.norm(wave1.m_prime.values)
        assert 1.0 - abs(vecs[:, 0] @ mp) <= 1e-8

    def test_eigensystem_sorted_and_cached(self, op1):
        vals, _ = op1.eigensystem()
        assert np.all(np.diff(vals) >= 0.0)
        assert op1.eigensystem()[0] is vals

    def test_semigroup_matches_matrix_exponential(self, grid20, op1):
        f = Field(grid20, np.exp(-((grid20.x - 2.0) ** 2) / 3.0) * np.sin(1.7 * grid20.x))
        t = 0.8
        want = expm(-t * op1.matrix) @ f.values
        got = op1.semigroup(t, f).values
        assert np.max(np.abs(got - want)) <= 1e-10

    def test_semigroup_decay_rate(self, grid20, op1):
        # after removing the kernel mode the decay rate is the gap; fit
        # at late times where the essential spectrum (edge at 2) has died off
        f = Field(grid20, np.exp(-((grid20.x - 2.0) ** 2) / 3.0) * np.sin(1.7 * grid20.x))
        ts = np.linspace(4.0, 8.0, 9)
        sups = [(op1.semigroup(t, f) - op1.kernel_projector(f)).norm_sup() for t in ts]
        rate = -np.polyfit(ts, np.log(sups), 1)[0]
        assert abs(rate - 1.5) / 1.5 <= 0.05

    def test_negative_time_rejected(self, grid20, op1):
        with pytest.raises(ValueError):
            op1.semigroup(-0.1, Field(grid20, np.zeros(grid20.N)))


class TestDistance:
    @pytest.mark.parametrize("norm", ["sup", "neg_holder", "neg_sobolev"])
    def test_member_has_zero_distance(self, wave1, norm):
        v = wave1.shifted(0.37).m
        dist, theta = dist_to_manifold(v, wave1, norm=norm)
        assert dist <= 1e-8
        assert abs(theta - 0.37) <= 1e-6

    def test_fermi_seed(self, wave1):
        v = wave1.shifted(0.37).m
        assert abs(fermi_coordinate(v, wave1) - 0.37) <= 1e-9

    @pytest.mark.parametrize("c", [1e-3, 1e-4])
    def test_orthogonal_perturbation_expansion(self, grid20, wave1, c):
        # v = m + c g with <g, m'> = 0: distance is c ||g|| to first order
        g = grid20.x * np.exp(-(grid20.x**2) / 8.0)
        v = Field(grid20, wave1.m.values + c * g)
        dist, theta = dist_to_manifold(v, wave1)
        assert abs(dist / (c * np.max(np.abs(g))) - 1.0) <= 1e-6
        assert abs(theta) <= 1e-6

    def test_translation_equivariance(self, grid20, wave1):
        # shift by a whole number of cells so sampled sup norms agree exactly
        z = 33 * grid20.dx
        x = grid20.x

        def state(theta):
            vals = np.tanh((x - theta) / np.sqrt(2.0))
            vals += 1e-2 * (x - theta) * np.exp(-((x - theta) ** 2) / 8.0)
            return Field(grid20, vals)

        d0, t0 = dist_to_manifold(state(0.0), wave1)
        dz, tz = dist_to_manifold(state(z), wave1)
        assert abs(d0 - dz) <= 1e-10
        assert abs((tz - t0) - z) <= 1e-8

    def test_rejects_unmatched_tails(self, grid20, wave1):
        with pytest.raises(ValueError):
            dist_to_manifold(Field(grid20, np.zeros(grid20.N)), wave1)

    def test_unknown_norm_rejected(self, wave1):
        with pytest.raises(ValueError):
            dist_to_manifold(wave1.m, wave1, norm="energy")

    def test_leftmost_tie_break(self):
        vals = np.array([3.0, 1.0, 1.0, 1.0, 2.0])
        assert _leftmost_argmin(vals, 1e-12) == 1
        near = np.array([3.0, 1.0 + 1e-15, 1.0, 2.0])
        assert _leftmost_argmin(near, 1e-12) == 1

    def test_symmetric_double_kink(self, grid20, wave1):
        # superposition of two kinks: the landscape is even in theta and
        # the minimizer sits at the symmetric center
        x = grid20.x
        v = Field(grid20, 0.5 * (np.tanh((x + 1.0) / np.sqrt(2.0))
                                 + np.tanh((x - 1.0) / np.sqrt(2.0))))
        dist, theta = dist_to_manifold(v, wave1, bracket=3.0)
        assert abs(theta) <= 1e-6
        assert 0.0 < dist < 1.0
