"""Tests for the spectral grid layer.

Reference values marked "oracle" were computed by scipy.integrate.quad
against the continuum definitions (Fourier transform in cycles per
unit length), independently of any FFT code.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinklab.grid import (
    Field,
    GridSpec,
    Kernel2D,
    apply_multiplier,
    apply_multiplier_2d,
    continuum_hat,
    dealias,
    derivative,
    diag_integral,
    diagonal,
    heat_plancherel_check,
    heat_semigroup,
    half_derivative,
    holder_norm,
    inner,
    integral,
    mollify,
    mollify_2d,
    neg_norm,
    norm_lp,
    require_flat,
    shift,
    shift_2d,
    sqrtd2_diag_integral,
    wrap_jump,
)


def heat_kernel(x, t):
    return np.exp(-(x**2) / (4.0 * t)) / np.sqrt(4.0 * np.pi * t)


class TestGridSpec:
    def test_basic_geometry(self):
        g = GridSpec(L=10.0, N=64)
        assert g.dx == pytest.approx(20.0 / 64)
        assert g.x[0] == -10.0
        assert g.x[-1] == pytest.approx(10.0 - g.dx)
        assert g.theta[1] == pytest.approx(1.0 / 20.0)
        assert g.nyquist == pytest.approx(64 / 40.0)

    @pytest.mark.parametrize("L,N", [(0.0, 64), (-1.0, 64), (10.0, 15), (10.0, 33)])
    def test_rejects_bad_parameters(self, L, N):
        with pytest.raises(ValueError):
            GridSpec(L=L, N=N)


class TestField:
    def test_roundtrip_through_hat(self, grid20, rng):
        f = Field(grid20, rng.standard_normal(grid20.N))
        back = Field.from_hat(grid20, f.hat)
        np.testing.assert_allclose(back.values, f.values, atol=1e-12)

    def test_values_are_immutable(self, grid20):
        f = Field.zeros(grid20)
        with pytest.raises(ValueError):
            f.values[3] = 1.0

    def test_rejects_nonfinite(self, grid20):
        bad = np.zeros(grid20.N)
        bad[7] = np.nan
        with pytest.raises(ValueError):
            Field(grid20, bad)

    def test_rejects_wrong_shape(self, grid20):
        with pytest.raises(ValueError):
            Field(grid20, np.zeros(grid20.N + 1))

    def test_arithmetic(self, grid20):
        f = Field.from_function(grid20, lambda x: heat_kernel(x, 0.3))
        h = 2.0 * f - f
        np.testing.assert_allclose(h.values, f.values, atol=1e-14)


class TestMultipliers:
    def test_heat_semigroup_matches_exact_kernel(self, grid20):
        f = Field.from_function(grid20, lambda x: heat_kernel(x, 0.5))
        evolved = heat_semigroup(f, 0.7)
        exact = heat_kernel(grid20.x, 1.2)
        np.testing.assert_allclose(evolved.values, exact, atol=1e-10)

    def test_mollifier_semigroup_property(self, grid20):
        f = Field.from_function(grid20, lambda x: heat_kernel(x, 0.4))
        two_step = mollify(mollify(f, 0.3), 0.4)
        one_step = mollify(f, 0.5)
        np.testing.assert_allclose(two_step.values, one_step.values, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(
        d1=st.floats(min_value=0.01, max_value=1.0),
        d2=st.floats(min_value=0.01, max_value=1.0),
    )
    def test_mollifier_composition_property(self, d1, d2):
        g = GridSpec(L=20.0, N=256)
        f = Field.from_function(g, lambda x: heat_kernel(x, 0.4))
        lhs = mollify(mollify(f, d1), d2)
        rhs = mollify(f, np.hypot(d1, d2))
        np.testing.assert_allclose(lhs.values, rhs.values, atol=1e-9)

    def test_derivative_on_exact_mode(self, grid20):
        th0 = 8 / (2 * grid20.L)
        f = Field.from_function(grid20, lambda x: np.sin(2 * np.pi * th0 * x))
        df = derivative(f)
        exact = 2 * np.pi * th0 * np.cos(2 * np.pi * th0 * grid20.x)
        np.testing.assert_allclose(df.values, exact, atol=1e-10)

    def test_half_derivative_eigenmode(self, grid20):
        # cos(2 pi theta0 x) is an exact eigenfunction of the periodic
        # operator with eigenvalue sqrt(theta0); this pins the frequency
        # convention (cycles per unit length, no 2 pi factors).
        th0 = 16 / (2 * grid20.L)
        f = Field.from_function(grid20, lambda x: np.cos(2 * np.pi * th0 * x))
        hd = half_derivative(f)
        exact = np.sqrt(th0) * f.values
        np.testing.assert_allclose(hd.values, exact, atol=1e-12)

    def test_half_derivative_against_continuum_quadrature(self, grid20):
        # oracle: 2 int_0^inf sqrt(th) exp(-4 pi^2 s th^2) cos(2 pi th x) dth
        # at s = 0.5 (scipy.integrate.quad, abs err < 2e-9).  The grid
        # operator is the periodic one; its kernel has |x|^{-3/2} tails,
        # so periodization shifts values by O(L^{-3/2}) ~ 2e-3 at L = 20.
        # This check therefore pins conventions only, not precision.
        f = Field.from_function(grid20, lambda x: heat_kernel(x, 0.5))
        hd = half_derivative(f)
        expected = {
            0.0: 1.308538453773127e-01,
            0.7: 8.905885727053646e-02,
            1.3: 2.626437809050728e-02,
        }
        for x0, val in expected.items():
            idx = int(round((x0 + grid20.L) / grid20.dx))
            assert hd.values[idx] == pytest.approx(val, abs=3e-3)

    def test_symbol_shape_validated(self, grid20):
        f = Field.zeros(grid20)
        with pytest.raises(ValueError):
            apply_multiplier(f, np.ones(5))

    def test_dealias_zeroes_high_modes(self, grid20, rng):
        f = Field(grid20, rng.standard_normal(grid20.N))
        fd = dealias(f)
        cut = grid20.N // 3
        assert np.all(np.abs(fd.hat[cut + 1 :]) < 1e-12)
        np.testing.assert_allclose(fd.hat[: cut + 1], f.hat[: cut + 1], atol=1e-12)

    def test_shift_matches_sampled_translation(self, grid20):
        f = Field.from_function(grid20, lambda x: heat_kernel(x, 0.5))
        moved = shift(f, 1.5)
        exact = heat_kernel(grid20.x - 1.5, 0.5)
        np.testing.assert_allclose(moved.values, exact, atol=1e-10)

    def test_shift_guards_against_kink_tails(self, grid20):
        kink = Field.from_function(grid20, lambda x: np.tanh(x / np.sqrt(2.0)))
        with pytest.raises(ValueError):
            shift(kink, 1.0)


class TestFlatnessGuard:
    def test_kink_rejected_deviation_accepted(self, grid20):
        kink = np.tanh(grid20.x / np.sqrt(2.0))
        assert wrap_jump(kink) > 1.9
        with pytest.raises(ValueError):
            require_flat(kink)
        bump = heat_kernel(grid20.x, 0.5)
        assert wrap_jump(bump) < 1e-12
        require_flat(bump)


class TestQuadratureAndTransform:
    def test_parseval(self, grid20):
        f = Field.from_function(grid20, lambda x: heat_kernel(x, 0.3))
        theta, fhat = continuum_hat(f)
        power = np.abs(fhat) ** 2
        spectral = (power[0] + 2 * np.sum(power[1:-1]) + power[-1]) / (2 * grid20.L)
        physical = grid20.dx * np.sum(f.values**2)
        assert spectral == pytest.approx(physical, rel=1e-12)

    def test_continuum_hat_of_gaussian(self, grid20):
        s = 0.5
        f = Field.from_function(grid20, lambda x: heat_kernel(x, s))
        theta, fhat = continuum_hat(f)
        exact = np.exp(-4 * np.pi**2 * s * theta**2)
        np.testing.assert_allclose(fhat.real, exact, atol=1e-10)
        np.testing.assert_allclose(fhat.imag, 0.0, atol=1e-10)

    def test_inner_and_integral(self, grid20):
        f = Field.from_function(grid20, lambda x: heat_kernel(x, 0.5))
        assert integral(f) == pytest.approx(1.0, abs=1e-12)
        # int q_s q_t = q_{s+t}(0)
        g = Field.from_function(grid20, lambda x: heat_kernel(x, 0.3))
        assert inner(f, g) == pytest.approx(heat_kernel(0.0, 0.8), rel=1e-12)

    def test_norm_lp(self, grid20):
        f = Field.from_function(grid20, lambda x: heat_kernel(x, 0.5))
        assert norm_lp(f, np.inf) == pytest.approx(heat_kernel(0.0, 0.5), rel=1e-10)
        assert norm_lp(f, 2.0) == pytest.approx(f.norm_l2(), rel=1e-14)


class TestKernel2D:
    def test_mollify_2d_of_tensor_gaussian(self):
        g = GridSpec(L=20.0, N=512)
        a, b, d = 0.5, 0.8, 0.3
        K = Kernel2D(g, np.outer(heat_kernel(g.x, a), heat_kernel(g.x, b)))
        Kd = mollify_2d(K, d)
        exact = np.outer(heat_kernel(g.x, a + d**2), heat_kernel(g.x, b + d**2))
        np.testing.assert_allclose(Kd.values, exact, atol=1e-10)

    def test_shift_2d(self):
        g = GridSpec(L=20.0, N=512)
        K = Kernel2D(g, np.outer(heat_kernel(g.x, 0.5), heat_kernel(g.x, 0.5)))
        Ks = shift_2d(K, 2.0)
        exact = np.outer(heat_kernel(g.x - 2.0, 0.5), heat_kernel(g.x - 2.0, 0.5))
        np.testing.assert_allclose(Ks.values, exact, atol=1e-10)

    def test_odd_symbol_rejected(self):
        g = GridSpec(L=20.0, N=64)
        K = Kernel2D(g, np.outer(heat_kernel(g.x, 0.5), heat_kernel(g.x, 0.5)))
        with pytest.raises(ValueError):
            apply_multiplier_2d(K, lambda t1, t2: t1)

    def test_diagonal_and_trace(self):
        g = GridSpec(L=20.0, N=256)
        vals = np.outer(heat_kernel(g.x, 0.5), heat_kernel(g.x, 0.8))
        K = Kernel2D(g, vals)
        assert K.symmetry_defect() > 0
        d = diagonal(K)
        np.testing.assert_allclose(d.values, np.diag(vals), atol=0)
        assert diag_integral(K) == pytest.approx(g.dx * np.trace(vals), rel=1e-14)

    def test_sqrtd2_diag_integral_closed_form(self):
        # oracle: for K = q_a (x) q_a the anti-diagonal integral is
        # int |th| exp(-8 pi^2 (a + d^2) th^2) dth = 1/(8 pi^2 (a + d^2))
        g = GridSpec(L=20.0, N=512)
        a = 0.5
        K = Kernel2D(g, np.outer(heat_kernel(g.x, a), heat_kernel(g.x, a)))
        val = sqrtd2_diag_integral(K, delta=0.1)
        assert val == pytest.approx(2.483362344174945e-02, abs=2e-6)
        val0 = sqrtd2_diag_integral(K, delta=0.0)
        assert val0 == pytest.approx(2.533029591058444e-02, abs=2e-6)
        # without the kink correction the zero-frequency bias dominates
        raw = sqrtd2_diag_integral(K, delta=0.0, kink_correction=False)
        assert abs(raw - 2.533029591058444e-02) > 5e-5


class TestNegNorm:
    def test_homogeneity(self, grid20, rng):
        f = Field(grid20, rng.standard_normal(grid20.N))
        n1 = neg_norm(f, 0.5)
        n3 = neg_norm(3.0 * f, 0.5)
        assert n3 == pytest.approx(3.0 * n1, rel=1e-12)

    def test_kappa_zero_recovers_sup_norm(self, grid20):
        f = Field.from_function(grid20, lambda x: heat_kernel(x, 0.5))
        assert neg_norm(f, 0.0) == pytest.approx(f.norm_sup(), rel=1e-3)

    def test_rough_field_is_small_in_negative_norm(self, grid20, rng):
        rough = Field(grid20, rng.standard_normal(grid20.N))
        smooth = Field.from_function(grid20, lambda x: heat_kernel(x, 0.5))
        ratio_rough = neg_norm(rough, 0.5) / rough.norm_sup()
        ratio_smooth = neg_norm(smooth, 0.5) / smooth.norm_sup()
        assert ratio_rough < 0.2 * ratio_smooth


class TestHeatPlancherel:
    @pytest.mark.parametrize("delta", [0.1, 0.05])
    def test_mode_sum_matches_closed_form(self, delta):
        mode_sum, exact = heat_plancherel_check(delta)
        assert abs(mode_sum - exact) <= 1e-6


class TestHolderNorm:
    def test_constant_is_its_magnitude(self, grid20):
        c = Field(grid20, np.full(grid20.N, -2.5))
        assert holder_norm(c, 0.3) == pytest.approx(2.5, abs=1e-12)

    def test_homogeneity(self, grid20):
        f = Field(grid20, np.exp(-grid20.x**2) * np.sin(3.0 * grid20.x))
        assert holder_norm(Field(grid20, 5.0 * f.values), 0.25) \
            == pytest.approx(5.0 * holder_norm(f, 0.25), rel=1e-12)

    def test_single_level_sine_oracle(self, grid20):
        """A pure sine is an eigenfunction of the heat multiplier, so
        with one level the estimator is 1 + lam^-eta (1 - e^{-4 pi^2
        lam^2 theta0^2}) in closed form (the extremum x = 2.5 is a grid
        point, so the sup is exact)."""
        theta0 = 0.1
        f = Field(grid20, np.sin(2.0 * np.pi * theta0 * grid20.x))
        lam, eta = 0.5, 0.5
        expected = 1.0 + lam**-eta * (
            1.0 - np.exp(-4.0 * np.pi**2 * lam**2 * theta0**2))
        assert holder_norm(f, eta, levels=[lam]) \
            == pytest.approx(expected, rel=1e-12)

    def test_rougher_fields_grow(self, grid20):
        norms = [holder_norm(
            Field(grid20, np.sin(2.0 * np.pi * k * grid20.x / 40.0)), 0.5)
            for k in (1, 4, 16)]
        assert norms[0] < norms[1] < norms[2]

    def test_rejects_eta_outside_unit_interval(self, grid20):
        f = Field(grid20, np.exp(-grid20.x**2))
        for eta in (0.0, 1.0, -0.2, 1.7):
            with pytest.raises(ValueError):
                holder_norm(f, eta)
