import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import freqsqueeze.fitting as fitting
from freqsqueeze.fitting import FitError, fit_parametric_gain, fit_saturation, gain_model, saturation_model
from freqsqueeze.nlo import (
    DispersionProfile,
    FrequencyGrid,
    PropagationConfig,
    conversion_efficiency,
    monochromatic_pump,
    solve_afc,
)

ONE = FrequencyGrid(1, 0.0, 1.0)


def test_models_vanish_at_zero_power():
    assert gain_model(0.0, 431.0, 2.0) == 0.0
    assert saturation_model(0.0, 0.925, 3.0) == 0.0
    assert gain_model(1e-12, 431.0, 2.0) == pytest.approx(431.0 * 1e-12 / 2.0, rel=1e-9)


def test_gain_round_trip_noiseless():
    P0 = 120.0
    P = np.linspace(0.1, 6, 20) * P0
    fit = fit_parametric_gain(P, gain_model(P, 431.0, P0))
    assert fit["etaM"] == pytest.approx(431.0, rel=1e-6)
    assert fit["P0"] == pytest.approx(P0, rel=1e-6)
    assert fit.residual_norm < 1e-6
    assert fit.model == "parametric_gain"
    assert gain_model(0.0, fit["etaM"], fit["P0"]) == 0.0


def test_gain_recovery_with_five_percent_noise():
    rng = np.random.default_rng(5)
    P0 = 80.0
    P = np.linspace(0.1, 6, 20) * P0
    truth = gain_model(P, 431.0, P0)
    for _ in range(25):
        y = truth * (1 + 0.05 * rng.standard_normal(P.size))
        fit = fit_parametric_gain(P, y, sigma=0.05 * y)
        assert fit["etaM"] == pytest.approx(431.0, rel=0.10)
        assert fit["P0"] == pytest.approx(P0, rel=0.10)
        assert np.all(np.isfinite(list(fit.stderr.values())))


def test_saturation_round_trip_noiseless():
    P_sat = 0.7
    P = np.linspace(0, 5, 15) * P_sat
    fit = fit_saturation(P, saturation_model(P, 0.925, P_sat))
    assert fit["c_max"] == pytest.approx(0.925, rel=1e-6)
    assert fit["P_sat"] == pytest.approx(P_sat, rel=1e-6)
    assert saturation_model(0.0, fit["c_max"], fit["P_sat"]) == 0.0


@given(etaM=st.floats(1, 1e4), logP0=st.floats(-1, 1), scale=st.floats(1e-3, 1e3))
@settings(max_examples=40)
def test_gain_round_trip_property(etaM, logP0, scale):
    P0 = scale * 10**logP0
    P = np.linspace(0.1, 6, 12) * scale
    fit = fit_parametric_gain(P, gain_model(P, etaM, P0))
    assert fit["etaM"] == pytest.approx(etaM, rel=1e-5)
    assert fit["P0"] == pytest.approx(P0, rel=1e-5)


@given(c_max=st.floats(0.05, 1), logPs=st.floats(-1, 1), scale=st.floats(1e-3, 1e3))
@settings(max_examples=40)
def test_saturation_round_trip_property(c_max, logPs, scale):
    P_sat = scale * 10**logPs
    P = np.linspace(0, 5, 12) * scale
    fit = fit_saturation(P, saturation_model(P, c_max, P_sat))
    assert fit["c_max"] == pytest.approx(c_max, rel=1e-5)
    assert fit["P_sat"] == pytest.approx(P_sat, rel=1e-5)


def test_saturation_fits_two_level_solver_sweep():
    # pump power enters as the squared coupling of a swept two-level converter
    power = np.linspace(0.0, 0.8, 8)
    conv = []
    for P in power:
        B = solve_afc(
            monochromatic_pump(ONE, np.sqrt(P)),
            DispersionProfile(),
            DispersionProfile(beta0_rate=1.0),
            None,
            PropagationConfig(length=40.0, z_steps=256),
        )
        conv.append(conversion_efficiency(B, [1.0])[0])
    conv = np.array(conv)
    fit = fit_saturation(power, conv)
    assert np.max(np.abs(saturation_model(power, fit["c_max"], fit["P_sat"]) - conv)) < 0.02
    assert fit["c_max"] == pytest.approx(1.0, abs=0.05)


def test_fit_input_errors():
    with pytest.raises(ValueError):
        fit_parametric_gain([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_parametric_gain([0, 1, 2], [0, 1, 2])
    with pytest.raises(ValueError):
        fit_parametric_gain([1, 2, 3], [1, 2])
    with pytest.raises(ValueError):
        fit_parametric_gain([1, 2, 3], [1, np.nan, 2])
    with pytest.raises(ValueError):
        fit_saturation([0, 1, 2], [0, 0.5, 1.2])
    with pytest.raises(ValueError):
        fit_saturation([0, 0, 0], [0, 0, 0])


def test_nonconvergence_reports_residual(monkeypatch):
    real = fitting.least_squares

    def stalled(*args, **kwargs):
        sol = real(*args, **kwargs)
        sol.status = 0
        sol.message = "budget exhausted"
        return sol

    monkeypatch.setattr(fitting, "least_squares", stalled)
    P = np.linspace(1, 5, 6)
    with pytest.raises(FitError) as info:
        fit_saturation(P, saturation_model(P, 0.5, 2.0) + 0.01)
    assert info.value.residual_norm > 0


def test_result_serialises():
    P = np.linspace(1, 5, 6)
    doc = fit_saturation(P, saturation_model(P, 0.5, 2.0)).to_dict()
    assert set(doc) == {"model", "params", "stderr", "residual_norm", "nfev"}
    assert set(doc["params"]) == {"c_max", "P_sat"}
