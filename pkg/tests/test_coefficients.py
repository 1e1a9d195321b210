import math

import numpy as np
import pytest

from cglsim import (
    ConditionError,
    builtin_family,
    check_conditions,
    cubic_dissipativity_scan,
    kbm_average,
    make_grid,
)
from cglsim.coefficients import GAMMA_FLOOR_FACTOR, _smooth_inhomogeneity


@pytest.fixture(scope="module")
def grid():
    return make_grid(1, 16)


OSC = dict(a_gamma=0.5, omega_gamma=2 * math.pi,
           c_f=0.2, omega_f=2 * math.pi,
           b0=0.5, b1=1.0, omega_b=2 * math.pi,
           sigma0=0.3, n_additive=4)


class TestBuiltinFamily:
    def test_certified_constants(self, grid):
        cset = builtin_family("benchmark_A", grid, **OSC)
        assert cset.L_f == pytest.approx(0.2)
        assert cset.lambda_f == pytest.approx(0.2)
        assert cset.L_g == 0.0
        assert cset.gamma_inf == pytest.approx(0.5)
        assert cset.gamma_sup == pytest.approx(1.5)
        # K covers both |b0| + |b1| and the HS norms of g at zero
        assert cset.K >= 1.5

    def test_lambda_f_signed_when_static(self, grid):
        cset = builtin_family("benchmark_A", grid, c_f=-0.3, omega_f=0.0)
        # a static contractive drift gets the signed one-sided constant
        assert cset.lambda_f == pytest.approx(-0.3)
        assert cset.L_f == pytest.approx(0.3)

    def test_gamma_floor_enforced_at_build(self, grid):
        with pytest.raises(ValueError, match="gamma floor"):
            builtin_family("benchmark_A", grid, beta=2.0, gamma0=1.0)

    def test_floor_is_beta_over_sqrt3(self, grid):
        beta = 1.2
        ok = builtin_family("benchmark_A", grid, beta=beta,
                            gamma0=beta / math.sqrt(3) + 1e-6)
        assert ok.gamma_floor_margin() > 0
        with pytest.raises(ValueError):
            builtin_family("benchmark_A", grid, beta=beta,
                           gamma0=beta / math.sqrt(3) - 1e-6)

    def test_unknown_parameter_rejected(self, grid):
        with pytest.raises(ValueError, match="unknown family parameters"):
            builtin_family("benchmark_A", grid, omega_q=1.0)

    def test_unknown_family_rejected(self, grid):
        with pytest.raises(ValueError, match="unknown family"):
            builtin_family("benchmark_B", grid)

    def test_constant_family_has_no_period(self, grid):
        cset = builtin_family("constant", grid, b0=0.5, sigma0=0.3)
        assert cset.period is None
        assert cset.gamma(0.0) == cset.gamma(0.37)

    def test_periodic_pair_common_period(self, grid):
        cset = builtin_family("periodic_pair", grid, omega=2 * math.pi,
                              a_gamma=0.5, b1=0.3)
        assert cset.period == pytest.approx(1.0)

    def test_incommensurate_frequencies_no_period(self, grid):
        cset = builtin_family("benchmark_A", grid, a_gamma=0.5,
                              omega_gamma=1.0, b1=0.3, omega_b=math.sqrt(2))
        assert cset.period is None

    def test_scaled_time_accessors(self, grid):
        cset = builtin_family("benchmark_A", grid, **OSC).with_epsilon(0.1)
        assert cset.gamma_eps(0.05) == pytest.approx(cset.gamma(0.5))

    def test_inhomogeneity_unit_norm(self, grid):
        from cglsim.torus_spectral import sobolev_norm_sq_coeffs
        h = _smooth_inhomogeneity(grid)
        assert sobolev_norm_sq_coeffs(grid, h, 0) == pytest.approx(1.0)


class TestKbmAverage:
    def test_closed_form_average(self, grid):
        cset = builtin_family("benchmark_A", grid, **OSC)
        avg = kbm_average(cset, T_grid=np.geomspace(1.0, 100.0, 6))
        assert avg.gamma_bar == pytest.approx(1.0)
        # f_bar keeps only the static inhomogeneity b0 h
        z = np.zeros(grid.n_lattice, dtype=complex)
        h = _smooth_inhomogeneity(grid)
        np.testing.assert_allclose(avg.f_bar(z), 0.5 * h, atol=1e-14)
        # oscillating c_f cos averages away
        u = grid.mode_field([1]).coeffs
        np.testing.assert_allclose(avg.f_bar(u) - 0.5 * h, 0 * u, atol=1e-14)

    def test_moduli_decay_for_oscillating_family(self, grid):
        cset = builtin_family("benchmark_A", grid, **OSC)
        # windows off the period grid so the small-T moduli are nonzero
        avg = kbm_average(cset, T_grid=np.geomspace(1.3, 137.0, 6))
        assert avg.non_convergent == ()
        tg, dv = avg.modulus_profiles["delta_gamma"]
        assert dv.max() > 0
        assert dv[-1] < dv.max() / 10

    def test_oscillating_diffusion_modulus_stalls(self, grid):
        # the diffusion condition averages the squared HS deviation, so a
        # persistently modulated sigma never satisfies it
        cset = builtin_family("benchmark_A", grid, sigma0=0.5, q1=0.5,
                              omega_g=2 * math.pi, n_additive=4)
        avg = kbm_average(cset, T_grid=np.geomspace(1.0, 100.0, 6))
        assert "delta_g" in avg.non_convergent

    def test_averaged_set_is_autonomous(self, grid):
        cset = builtin_family("benchmark_A", grid, **OSC)
        avg = kbm_average(cset, T_grid=np.geomspace(1.0, 50.0, 5))
        bar = avg.as_coefficient_set()
        assert bar.gamma(0.0) == bar.gamma(17.3) == pytest.approx(1.0)
        assert bar.period is None
        u = grid.mode_field([1]).coeffs
        np.testing.assert_array_equal(bar.f(0.0, u), bar.f(5.5, u))


class TestCheckConditions:
    def test_gap_margins_closed_form(self, grid):
        cset = builtin_family("benchmark_A", grid, c_f=0.2, omega_f=0.0,
                              r=0.4, omega_m=0.0)
        rep = check_conditions(cset)
        # lambda_* = 1, lambda_f = 0.2, L_g = 0.4
        assert rep.margins["gap1"] == pytest.approx(1 - 0.2 - 0.08)
        assert rep.margins["gap2"] == pytest.approx(1 - 0.2 - 4.5 * 0.16)
        assert rep.p_max == pytest.approx((1 - 0.2) / 0.16 + 0.5)

    def test_p_max_infinite_without_multiplicative_noise(self, grid):
        cset = builtin_family("benchmark_A", grid, sigma0=0.3)
        assert check_conditions(cset).p_max == math.inf

    def test_gap_violation_flagged(self, grid):
        cset = builtin_family("benchmark_A", grid, c_f=1.5, omega_f=1.0)
        rep = check_conditions(cset)
        assert not rep.satisfied["gap1"]
        with pytest.raises(ConditionError, match="gap1"):
            rep.require("gap1")

    def test_sampling_refutes_lying_constants(self, grid):
        import dataclasses
        cset = builtin_family("benchmark_A", grid, c_f=0.5, omega_f=0.0)
        liar = dataclasses.replace(cset, L_f=0.01, lambda_f=0.01)
        rep = check_conditions(liar)
        assert "L_f" in rep.violations or "lambda_f" in rep.violations
        with pytest.raises(ConditionError, match="refuted"):
            rep.require("gamma_floor")

    def test_honest_family_clean(self, grid):
        rep = check_conditions(builtin_family("benchmark_A", grid, **OSC))
        assert rep.ok


class TestDissipativityScan:
    def test_above_floor_nonnegative(self):
        out = cubic_dissipativity_scan(1.0, 1.0, n_pairs=300)
        assert out["min_inner_product"] >= -1e-10

    def test_at_floor_nonnegative(self):
        beta = 1.0
        out = cubic_dissipativity_scan(beta * GAMMA_FLOOR_FACTOR, beta,
                                       n_pairs=300)
        assert out["min_inner_product"] >= -1e-8

    def test_below_floor_finds_witness(self):
        beta = 1.0
        out = cubic_dissipativity_scan(0.9 * beta * GAMMA_FLOOR_FACTOR, beta,
                                       n_pairs=300)
        assert out["min_inner_product"] < -1e-6
        u, v = out["witness"]
        assert u is not None and v is not None

    def test_beta_zero_always_dissipative(self):
        out = cubic_dissipativity_scan(0.05, 0.0, n_pairs=300)
        assert out["min_inner_product"] >= -1e-12
