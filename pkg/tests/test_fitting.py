import math

import numpy as np
import pytest

from conftest import G2
import oracles
from ladder_eit import FieldConfig, LadderScheme, LineStack, VaporEnsemble
from ladder_eit.fitting import (DataFormatError, EITModel, FitError, FitProblem, MeasuredSpectrum,
                                Parameter, fit, load_measured, null_model_ratio, residuals,
                                synthetic_data)

GRID = np.linspace(-8, 8, 241) * G2


@pytest.fixture(scope="module")
def model():
    s = LadderScheme(oracles.LAMBDA_P, oracles.LAMBDA_C, G2, oracles.G3, gamma_extra=1.0 * G2)
    v = VaporEnsemble(320.0, oracles.MASS_RB87, 1e16, 0.05)
    return EITModel(LineStack.single(s), FieldConfig(0, 0, 1.5 * G2, "counter"), v)


@pytest.fixture(scope="module")
def problem(model):
    return model.problem({"omega_c": (0.2 * G2, 5 * G2), "gamma_extra": (0.0, 5 * G2)})


class TestLoader:
    def test_csv_with_metadata_and_units(self, tmp_path):
        p = tmp_path / "scan.csv"
        p.write_text("# direction: co\n# cell: 5 cm\n"
                     "delta_p_MHz,transmission,reference\n"
                     "10,0.5,1.0\n-10,1.02,1.0\n0,0.25,1.0\n")
        m = load_measured(p)
        assert m.direction.value == "co"
        assert m.meta["cell"] == "5 cm"
        assert m.grid == pytest.approx(2 * math.pi * 1e6 * np.array([-10.0, 0.0, 10.0]))
        assert list(m.transmission) == [1.02, 0.25, 0.5]  # above 1 kept
        assert list(m.reference) == [1.0, 1.0, 1.0]

    def test_tab_delimited_gamma_units_and_override(self, tmp_path):
        p = tmp_path / "scan.tsv"
        p.write_text("delta_p_Gamma2\ttransmission\n-1\t0.9\n1\t0.8\n")
        m = load_measured(p, gamma2=G2, direction="counter")
        assert m.grid == pytest.approx([-G2, G2])
        assert m.direction.value == "counter"

    @pytest.mark.parametrize("text", [
        "delta_p,transmission\n0,1\n",                         # no unit tag
        "delta_p_MHz,signal\n0,1\n",                            # no transmission column
        "delta_p_MHz,transmission\n0,1\n0,0.5\n",               # repeated detuning
        "delta_p_MHz,transmission\n0,-0.1\n1,0.5\n",            # negative value
        "delta_p_MHz,transmission\n0,abc\n",                    # not a number
        "",
    ])
    def test_malformed_files(self, tmp_path, text):
        p = tmp_path / "bad.csv"
        p.write_text(text)
        with pytest.raises(DataFormatError):
            load_measured(p)


class TestResidualsAndFit:
    def test_zero_at_truth(self, problem):
        truth = problem.values()
        data = synthetic_data(problem, truth, GRID)
        assert np.max(np.abs(residuals(problem, truth, data))) < 1e-10
        res = fit(problem, data, truth)
        assert res.rms < 1e-10
        assert res.params["omega_c"] == pytest.approx(truth["omega_c"], rel=1e-8)

    def test_two_parameter_recovery(self, problem):
        truth = problem.values()
        data = synthetic_data(problem, truth, GRID, noise=0.01, seed=5)
        res = fit(problem, data, {"omega_c": 1.0 * G2, "gamma_extra": 0.5 * G2})
        assert res.converged
        assert res.params["omega_c"] == pytest.approx(truth["omega_c"], rel=0.05)
        assert res.params["gamma_extra"] == pytest.approx(truth["gamma_extra"], rel=0.10)
        assert res.rms == pytest.approx(0.01, rel=0.2)
        assert set(res.report()) >= {"params", "stderr", "rms", "iterations", "bounds_hit",
                                     "covariance_diagonal", "converged"}
        # stderr is in the parameter's own units and covers the actual error
        err = abs(res.params["omega_c"] - truth["omega_c"])
        assert 0 < res.stderr["omega_c"] and err < 5 * res.stderr["omega_c"]

    def test_objective_never_increases(self, problem):
        data = synthetic_data(problem, problem.values(), GRID, noise=0.02, seed=1)
        for start in ({"omega_c": 4.5 * G2, "gamma_extra": 4.5 * G2},
                      {"omega_c": 0.3 * G2, "gamma_extra": 0.0}):
            res = fit(problem, data, start, max_iterations=3)
            assert res.rms <= res.initial_rms

    def test_deterministic(self, problem):
        data = synthetic_data(problem, problem.values(), GRID, noise=0.01, seed=9)
        a = fit(problem, data, {"omega_c": 2.0 * G2})
        b = fit(problem, data, {"omega_c": 2.0 * G2})
        assert a.params == b.params

    def test_amplitude_scale_equivariance(self, model):
        base = model.problem({"omega_c": (0.2 * G2, 5 * G2), "amplitude": (0.5, 1.5)})
        data = synthetic_data(base, base.values(), GRID, noise=0.01, seed=2)
        c = 2.5
        scaled = model.problem({"omega_c": (0.2 * G2, 5 * G2), "amplitude": (0.5 * c, 1.5 * c)},
                               values={"amplitude": c})
        sdata = MeasuredSpectrum(data.grid, c * data.transmission, data.direction)
        start = {"omega_c": 1.0 * G2}
        a = fit(base, data, {**start, "amplitude": 0.9})
        b = fit(scaled, sdata, {**start, "amplitude": 0.9 * c})
        assert b.params["amplitude"] == pytest.approx(c * a.params["amplitude"], rel=1e-6)
        assert b.params["omega_c"] == pytest.approx(a.params["omega_c"], rel=1e-6)
        assert b.params["offset"] == pytest.approx(a.params["offset"], rel=1e-6, abs=1e-6 * G2)

    def test_quadratic_problem_converges_quickly(self):
        x = np.linspace(-2, 2, 41)
        quad = FitProblem(lambda p, g: (g - p["a"]) ** 2, {"a": Parameter(0.0, -5.0, 5.0, True)})
        data = MeasuredSpectrum(x, (x - 1.3) ** 2)
        res = fit(quad, data, {"a": -3.0})
        assert res.converged and res.iterations < 50
        assert res.params["a"] == pytest.approx(1.3, abs=1e-8)

    def test_zero_weight_data_is_flagged(self, problem):
        data = synthetic_data(problem, problem.values(), GRID, noise=0.01)
        blind = MeasuredSpectrum(data.grid, data.transmission, weights=np.zeros(GRID.size))
        res = fit(problem, blind)
        assert not res.converged
        assert "degenerate" in res.message
        assert all(math.isnan(v) for v in res.stderr.values())

    def test_iteration_cap_returns_best_so_far(self, problem):
        data = synthetic_data(problem, problem.values(), GRID, noise=0.01, seed=3)
        res = fit(problem, data, {"omega_c": 4.5 * G2, "gamma_extra": 4.0 * G2},
                  max_iterations=2)
        assert not res.converged
        assert res.rms <= res.initial_rms

    def test_null_model_is_worse(self, problem):
        truth = problem.values()
        data = synthetic_data(problem, truth, GRID, noise=0.005, seed=4)
        assert null_model_ratio(problem, truth, data) > 5


class TestProblemValidation:
    def test_requires_a_free_parameter(self):
        with pytest.raises(FitError):
            FitProblem(lambda p, g: g, {"a": Parameter(1.0)})

    def test_bounds_must_be_finite_and_ordered(self):
        with pytest.raises(FitError):
            FitProblem(lambda p, g: g, {"a": Parameter(1.0, 0.0, math.inf, True)})
        with pytest.raises(FitError):
            FitProblem(lambda p, g: g, {"a": Parameter(1.0, 2.0, 1.0, True)})

    def test_start_outside_bounds(self, problem):
        data = synthetic_data(problem, problem.values(), GRID)
        with pytest.raises(FitError):
            fit(problem, data, {"omega_c": 50 * G2})

    def test_unknown_parameter(self, model):
        with pytest.raises(FitError):
            model.problem({"temperature": (200.0, 400.0)})

    def test_offset_always_free(self, problem):
        assert "offset" in problem.free_names
