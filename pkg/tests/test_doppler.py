import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import G2
import oracles
from ladder_eit import (ConvergenceError, FieldConfig, LadderScheme, ModelError, QuadratureSpec,
                        Rule, VaporEnsemble, doppler_susceptibility, doppler_susceptibility_mc,
                        stationary_susceptibility, voigt_susceptibility)
from ladder_eit.doppler import _Coefficients, _pole_panels, velocity_average

FROZEN = json.loads((Path(__file__).parent / "data" / "frozen_values.json").read_text())


def vapor(T, n=1e16):
    return VaporEnsemble(T, oracles.MASS_RB87, n, 0.05)


@pytest.mark.parametrize("case", FROZEN["cases"], ids=lambda c: c["label"])
def test_frozen_thermal_averages(case):
    s = LadderScheme(oracles.LAMBDA_P, oracles.LAMBDA_C, G2, oracles.G3,
                     gamma_extra=case["gamma_extra"] * G2)
    f = FieldConfig(0, case["delta_c"] * G2, case["omega_c"] * G2, case["geometry"])
    got = velocity_average(s, f, oracles.v_th(case["temperature"]), [case["delta_p"] * G2])[0]
    ref = complex(case["re"], case["im"])
    assert abs(got - ref) <= 1e-9 * abs(ref)


@pytest.mark.parametrize("T", [296.0, 400.0])
def test_voigt_limit(scheme, T):
    v = vapor(T)
    span = 6 * scheme.k_p * v.v_th
    grid = np.linspace(-span, span, 501)
    chi = doppler_susceptibility(scheme, FieldConfig(), v, delta_p=grid)
    ref = voigt_susceptibility(scheme, v, grid)
    assert np.max(np.abs(chi - ref) / np.abs(ref)) < 1e-6


def test_voigt_oracle_peak_value(scheme):
    # Doppler-limited peak: Im chi -> sqrt(pi) pref / (k_p v_th) as Gamma / (k_p v_th) -> 0
    v = vapor(320.0)
    narrow = replace(scheme, gamma2=1e-6 * G2)
    peak = voigt_susceptibility(narrow, v, 0.0).imag
    assert peak == pytest.approx(math.sqrt(math.pi) * narrow.prefactor(v.density)
                                 / (narrow.k_p * v.v_th), rel=1e-6)


@pytest.mark.parametrize("rule", [Rule.GAUSS_HERMITE, Rule.ADAPTIVE_TRAPEZOID])
def test_rules_agree_in_broad_line_regime(scheme, rule):
    # broad |2> and |3> keep every pole O(1) away from the real u axis
    s = replace(scheme, gamma_extra=2.0 * G2, gamma3=0.5 * G2)
    f = FieldConfig(0, 0.5 * G2, 1.0 * G2, "counter")
    v = vapor(0.1)
    grid = np.linspace(-6, 6, 49) * G2
    tol = 1e-7
    ref = doppler_susceptibility(s, f, v, QuadratureSpec(rel_tol=tol), grid)
    got = doppler_susceptibility(s, f, v, QuadratureSpec(rule, rel_tol=tol), grid)
    assert np.max(np.abs(got - ref) / np.abs(ref)) < 10 * tol


@pytest.mark.parametrize("geometry", ["counter", "co"])
def test_panel_rule_matches_hermite_and_trapezoid_on_fig3_lines(scheme, geometry):
    f = FieldConfig(0, 0, 1.5 * G2, geometry)
    v = vapor(320.0)
    grid = np.array([-3.0, -1.3, 0.0, 0.4, 2.2]) * G2
    tol = 1e-7
    ref = doppler_susceptibility(scheme, f, v, QuadratureSpec(rel_tol=tol), grid)
    trap = doppler_susceptibility(
        scheme, f, v, QuadratureSpec(Rule.ADAPTIVE_TRAPEZOID, node_count=4096, rel_tol=tol,
                                     max_doublings=10), grid)
    assert np.max(np.abs(trap - ref) / np.abs(ref)) < 10 * tol


def test_doubling_changes_less_than_tolerance(scheme):
    s = replace(scheme, gamma_extra=2.0 * G2, gamma3=0.5 * G2)
    f = FieldConfig(0, 0, 1.0 * G2, "counter")
    v = vapor(0.1)
    grid = np.linspace(-4, 4, 17) * G2
    q = QuadratureSpec(Rule.GAUSS_HERMITE, node_count=400, rel_tol=1e-8)
    a = doppler_susceptibility(s, f, v, q, grid)
    b = doppler_susceptibility(s, f, v, replace(q, node_count=800), grid)
    assert np.max(np.abs(a - b) / np.abs(b)) < q.rel_tol


def test_non_convergence_reports_achieved_error(scheme):
    q = QuadratureSpec(Rule.GAUSS_HERMITE, node_count=8, rel_tol=1e-10, max_doublings=2)
    with pytest.raises(ConvergenceError) as info:
        doppler_susceptibility(scheme, FieldConfig(0, 0, 1.5 * G2), vapor(320.0), q,
                               np.array([0.0, G2]))
    assert info.value.achieved > q.rel_tol
    assert info.value.value is not None


def test_hermite_node_cap_is_hard(scheme):
    q = QuadratureSpec(Rule.GAUSS_HERMITE, node_count=200, rel_tol=1e-12, max_doublings=20)
    with pytest.raises(ConvergenceError):
        doppler_susceptibility(replace(scheme, gamma2=1e-3 * G2), FieldConfig(), vapor(320.0), q,
                               np.array([0.0]))


def test_quadrature_spec_validation():
    for kwargs in ({"node_count": 4}, {"rel_tol": 0.0}, {"rel_tol": 0.1},
                   {"velocity_cutoff": 3.0}, {"rule": "simpson"}):
        with pytest.raises((ModelError, ValueError)):
            QuadratureSpec(**kwargs)


def test_geometry_enters_only_through_signed_control_wavenumber(scheme):
    vt = oracles.v_th(320.0)
    counter = _Coefficients.build(scheme, FieldConfig(0, 0, 1.5 * G2, "counter"), vt)
    co = _Coefficients.build(scheme, FieldConfig(0, 0, 1.5 * G2, "co"), vt)
    # co geometry with k_c -> -k_c
    flipped = replace(co, b=(scheme.k_p + (+1) * (-scheme.k_c)) * vt)
    assert flipped == counter
    dp = np.linspace(-3, 3, 13) * G2
    q = QuadratureSpec()
    assert np.array_equal(_pole_panels(flipped, dp, q), _pole_panels(counter, dp, q))


@given(dp=st.floats(-10, 10), dc=st.floats(-10, 10), oc=st.floats(0, 10),
       geo=st.sampled_from(["counter", "co"]))
def test_detuning_reflection_symmetry(dp, dc, oc, geo):
    # u -> -u maps (dp, dc) to (-dp, -dc) and g to -conj(g)
    s = LadderScheme(oracles.LAMBDA_P, oracles.LAMBDA_C, G2, oracles.G3)
    v = vapor(320.0)
    a = doppler_susceptibility(s, FieldConfig(0, dc * G2, oc * G2, geo), v, delta_p=dp * G2)
    b = doppler_susceptibility(s, FieldConfig(0, -dc * G2, oc * G2, geo), v, delta_p=-dp * G2)
    assert b == pytest.approx(-a.conjugate(), rel=1e-7, abs=1e-9 * abs(a))


@given(dc=st.floats(-15, 15), oc=st.floats(0, 10), gx=st.floats(0, 5),
       geo=st.sampled_from(["counter", "co"]), T=st.floats(50, 500))
def test_passivity_after_averaging(dc, oc, gx, geo, T):
    s = LadderScheme(oracles.LAMBDA_P, oracles.LAMBDA_C, G2, oracles.G3, gamma_extra=gx * G2)
    grid = np.linspace(-12, 12, 41) * G2
    chi = doppler_susceptibility(s, FieldConfig(0, dc * G2, oc * G2, geo), vapor(T),
                                 delta_p=grid)
    assert np.all(chi.imag >= -1e-10 * np.max(np.abs(chi)))


def test_zero_density_gives_exact_zero(scheme):
    f = FieldConfig(0, G2, 1.5 * G2)
    assert doppler_susceptibility(scheme, f, vapor(320.0, 0.0), delta_p=0.3 * G2) == 0j
    mc = doppler_susceptibility_mc(scheme, f, vapor(320.0, 0.0), n_samples=10**4)
    assert mc.value == 0j


def test_cold_limit_follows_second_order_doppler_correction(scheme):
    # <1/(d2 - a u)> = (1/d2)(1 + a^2 / (2 d2^2) + ...) for a = k_p v_th -> 0
    dp = 0.7 * G2
    cold = vapor(1e-6)
    chi = doppler_susceptibility(scheme, FieldConfig(), cold, delta_p=dp)
    chi0 = stationary_susceptibility(scheme, FieldConfig(), cold.density, dp)
    a = scheme.k_p * cold.v_th
    d2 = dp + 0.5j * scheme.gamma_probe
    assert (chi / chi0 - 1) == pytest.approx(a * a / (2 * d2 * d2), rel=1e-2)


@pytest.mark.parametrize("geometry", ["counter", "co"])
def test_cold_limit_reaches_stationary_value(scheme, geometry):
    f = FieldConfig(0, 0.4 * G2, 1.5 * G2, geometry)
    cold = vapor(1e-9)
    for dp in (-1.2 * G2, 0.0, 0.9 * G2):
        chi = doppler_susceptibility(scheme, f, cold, delta_p=dp)
        ref = stationary_susceptibility(scheme, f, cold.density, dp)
        assert abs(chi - ref) <= 1e-6 * abs(ref)


def test_threads_do_not_change_results(scheme):
    f = FieldConfig(0, 0, 1.5 * G2, "counter")
    grid = np.linspace(-5, 5, 1001) * G2
    one = doppler_susceptibility(scheme, f, vapor(320.0), delta_p=grid)
    many = doppler_susceptibility(scheme, f, vapor(320.0), delta_p=grid, threads=3)
    assert np.array_equal(one, many)


def test_scalar_and_array_agree(scheme):
    f = FieldConfig(0.25 * G2, 0, 1.5 * G2)
    s = doppler_susceptibility(scheme, f, vapor(320.0))
    a = doppler_susceptibility(scheme, f, vapor(320.0), delta_p=np.array([0.25 * G2]))
    assert isinstance(s, complex) and s == a[0]


class TestMonteCarlo:
    def test_agrees_with_quadrature(self, scheme):
        for geo, dp in (("counter", 0.8), ("co", -0.5)):
            f = FieldConfig(dp * G2, 0.3 * G2, 1.5 * G2, geo)
            mc = doppler_susceptibility_mc(scheme, f, vapor(320.0), n_samples=2 * 10**5, seed=7)
            assert mc.within(doppler_susceptibility(scheme, f, vapor(320.0)))

    def test_matches_voigt_without_control(self, scheme):
        mc = doppler_susceptibility_mc(scheme, FieldConfig(0.4 * G2), vapor(296.0),
                                       n_samples=2 * 10**5, seed=3)
        assert mc.within(complex(voigt_susceptibility(scheme, vapor(296.0), 0.4 * G2)))

    def test_deterministic_and_chunking_invariant(self, scheme):
        f = FieldConfig(0.1 * G2, 0, G2)
        a = doppler_susceptibility_mc(scheme, f, vapor(320.0), n_samples=50_000, seed=11)
        b = doppler_susceptibility_mc(scheme, f, vapor(320.0), n_samples=50_000, seed=11)
        assert a == b
        c = doppler_susceptibility_mc(scheme, f, vapor(320.0), n_samples=50_000, seed=12)
        assert c.value != a.value

    def test_standard_error_scales_as_inverse_root_n(self, scheme):
        f = FieldConfig(0.1 * G2, 0, G2)
        small = doppler_susceptibility_mc(scheme, f, vapor(320.0), n_samples=40_000)
        big = doppler_susceptibility_mc(scheme, f, vapor(320.0), n_samples=160_000)
        assert big.stderr_imag == pytest.approx(small.stderr_imag / 2, rel=0.1)

    def test_minimum_sample_count(self, scheme):
        with pytest.raises(ModelError):
            doppler_susceptibility_mc(scheme, FieldConfig(), vapor(320.0), n_samples=100)
