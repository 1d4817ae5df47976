import json
import math

import numpy as np
import pytest

from nvsim.analysis import (
    damped_sin,
    exp_decay,
    fit,
    fit_auto,
    fit_multistart,
    get_model,
    initial_guess,
    lorentzian_multi,
    model_exp_decay,
    model_lorentzian_multi,
    model_ramsey_3cos,
    numeric_jacobian,
    ramsey_3cos,
    wrap_phase,
)
from nvsim.errors import FitError, UnderdeterminedError
from nvsim.hamiltonian import TETRAHEDRAL_AXES, NVParameters, odmr_spectrum


def test_get_model_parses_names():
    assert get_model("lorentzian_multi(6)").n_params == 19
    assert get_model("lorentzian_multi:2").param_names == (
        "baseline", "center_1", "width_1", "depth_1", "center_2", "width_2", "depth_2",
    )
    assert get_model("ramsey_3cos").n_params == 9
    assert get_model(" exp_decay ").name == "exp_decay"
    with pytest.raises(FitError):
        get_model("gaussian")
    with pytest.raises(FitError):
        get_model("lorentzian_multi(x)")
    with pytest.raises(FitError):
        lorentzian_multi(0)


def test_model_shapes():
    x = np.linspace(0.0, 1.0, 7)
    assert lorentzian_multi(2)(x, [1.0, 0.3, 0.1, 0.2, 0.7, 0.1, 0.2]).shape == (7,)
    assert ramsey_3cos()(x, [0, 1, 1, 1, 2, 3, 0, 0, 0]).shape == (7,)
    assert damped_sin()(x, [1, 1, 0, 1, 0])[0] == pytest.approx(1.0)


def test_model_values_at_known_points():
    # half depth one half-width from the centre
    f = np.array([2.87e9, 2.87e9 + 0.5e6, 3.5e9])
    y = model_lorentzian_multi(f, [1.0, 2.87e9, 1e6, 0.2])
    assert y[0] == pytest.approx(0.8)
    assert y[1] == pytest.approx(0.9)
    assert y[2] == pytest.approx(1.0, abs=1e-6)
    t = np.array([0.0, 1e-6])
    r = model_ramsey_3cos(t, [0.5, 0.1, 1e-6, 1e6, 2e6, 3e6, 0.0, 0.0, 0.0])
    assert r[0] == pytest.approx(0.8)
    assert r[1] == pytest.approx(0.5 + 0.3 * math.exp(-1.0))


def test_numeric_jacobian_matches_central_differences():
    rng = np.random.default_rng(3)
    x = np.linspace(-5.0, 5.0, 81)
    t = np.linspace(0.0, 4.0, 81)
    cases = [
        (lorentzian_multi(2), x, lambda: [rng.uniform(0.5, 1.5), rng.uniform(-3, -1), rng.uniform(0.5, 2), rng.uniform(0.1, 1), rng.uniform(1, 3), rng.uniform(0.5, 2), rng.uniform(0.1, 1)]),
        (ramsey_3cos(), t, lambda: [rng.uniform(0.5, 1.5), rng.uniform(0.1, 1), rng.uniform(1, 3), *rng.uniform(0.2, 2.0, 3), *rng.uniform(-3, 3, 3)]),
        (exp_decay(), t, lambda: [rng.uniform(0.5, 2), rng.uniform(0.5, 3), rng.uniform(-1, 1)]),
        (damped_sin(), t, lambda: [rng.uniform(0.5, 2), rng.uniform(0.2, 2), rng.uniform(-3, 3), rng.uniform(1, 3), rng.uniform(-1, 1)]),
    ]
    for model, grid, draw in cases:
        for _ in range(5):
            p = np.array(draw(), dtype=float)
            jac = numeric_jacobian(model.func, grid, p)
            ref = np.empty_like(jac)
            for j in range(len(p)):
                h = 1e-5 * max(abs(p[j]), 1.0)
                up, down = p.copy(), p.copy()
                up[j] += h
                down[j] -= h
                ref[:, j] = (model(grid, up) - model(grid, down)) / (2 * h)
            col = np.max(np.abs(ref), axis=0)
            assert np.all(np.max(np.abs(jac - ref), axis=0) <= 1e-4 * col), model.name


def test_exact_data_is_recovered():
    x = np.linspace(0.0, 5.0, 50)
    y = model_exp_decay(x, [2.0, 1.5, 0.3])
    res = fit(exp_decay(), x, y, [1.0, 1.0, 0.0])
    assert res.converged
    assert res.parameters == pytest.approx([2.0, 1.5, 0.3], rel=1e-5)
    assert res.residual_norm < 1e-6
    assert res.residual_norm <= res.initial_residual_norm
    assert res.n_points == 50


def test_millisecond_decay_time_is_recovered_exactly():
    t = np.linspace(0.0, 5e-3, 60)
    y = np.exp(-t / 1e-3)
    res = fit(exp_decay(), t, y, [0.8, 0.6e-3, 0.05])
    assert res.as_dict()["tau"] == pytest.approx(1e-3, rel=1e-8)


def test_lorentzian_moves_hertz_scale_parameters():
    f = np.linspace(2.86e9, 2.88e9, 401)
    truth = [1.0, 2.87e9, 1e6, 0.2]
    y = model_lorentzian_multi(f, truth)
    res = fit(lorentzian_multi(1), f, y, [1.0, 2.8703e9, 1.2e6, 0.2])
    d = res.as_dict()
    assert d["center_1"] == pytest.approx(2.87e9, abs=1.0)
    assert d["width_1"] == pytest.approx(1e6, rel=1e-6)

    rng = np.random.default_rng(11)
    noisy = fit_auto(lorentzian_multi(1), f, y + rng.normal(scale=0.01, size=f.size))
    sigma = dict(zip(noisy.param_names, noisy.uncertainties))
    assert 1e2 < sigma["center_1"] < 5e4
    assert 1e2 < sigma["width_1"] < 1e5


def test_noisy_lorentzian_centre_over_many_trials():
    f = np.linspace(2.86e9, 2.88e9, 401)
    center = 2.87e9 + 17e3  # off the frequency grid
    clean = model_lorentzian_multi(f, [1.0, center, 1e6, 0.2])
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        res = fit_auto(lorentzian_multi(1), f, clean + rng.normal(scale=0.01, size=f.size))
        hits += abs(res.as_dict()["center_1"] - center) < 50e3
    assert hits >= 95


def test_ramsey_triplet_frequencies_are_recovered():
    t = np.linspace(0.0, 4e-6, 200)
    tones = [3e6 - 2.16e6, 3e6, 3e6 + 2.16e6]
    truth = [1.0, 0.1, 1.5e-6, *tones, 0.0, 0.0, 0.0]
    rng = np.random.default_rng(5)
    y = model_ramsey_3cos(t, truth) + rng.normal(scale=0.002, size=t.size)
    res = fit_auto(ramsey_3cos(), t, y)
    d = res.as_dict()
    for k, f in enumerate(tones, start=1):
        assert abs(d[f"f_{k}"] - f) < 50e3


def test_noisy_damped_sine():
    rng = np.random.default_rng(0)
    t = np.linspace(0.0, 2e-6, 201)
    truth = [1.0, 3e6, 0.4, 1e-6, 2.0]
    y = damped_sin()(t, truth) + rng.normal(scale=0.02, size=t.size)
    res = fit_auto(damped_sin(), t, y)
    d = res.as_dict()
    assert d["frequency"] == pytest.approx(3e6, rel=0.01)
    assert d["tau"] == pytest.approx(1e-6, rel=0.1)
    assert -math.pi < d["phase"] <= math.pi
    assert np.all(res.uncertainties > 0)


def test_damped_sine_sign_ambiguity_is_removed():
    t = np.linspace(0.0, 1e-6, 101)
    y = damped_sin()(t, [1.0, 4e6, 0.5, 2e-6, 0.0])
    res = fit(damped_sin(), t, y, [1.0, -4e6, -0.5, 2e-6, 0.0])
    d = res.as_dict()
    assert d["frequency"] == pytest.approx(4e6, rel=1e-6)
    assert d["phase"] == pytest.approx(0.5, abs=1e-5)


def test_lorentzian_centers_come_out_sorted():
    f = np.linspace(-5.0, 5.0, 401)
    model = lorentzian_multi(2)
    y = model(f, [1.0, -1.0, 0.5, 0.2, 2.0, 0.8, 0.1])
    res = fit(model, f, y, [1.0, 2.1, 0.7, 0.1, -0.9, 0.6, 0.2])
    d = res.as_dict()
    assert d["center_1"] == pytest.approx(-1.0, abs=1e-6)
    assert d["center_2"] == pytest.approx(2.0, abs=1e-6)
    assert d["depth_1"] == pytest.approx(0.2, rel=1e-5)


def test_ramsey_tones_are_canonical():
    t = np.linspace(0.0, 4e-6, 200)
    truth = [1.0, 0.2, 2e-6, 0.84e6, 3e6, 5.16e6, 0.1, 0.2, 0.3]
    y = ramsey_3cos()(t, truth)
    init = [1.0, 0.2, 2e-6, 5.16e6, -3e6, 0.84e6, 0.3, -0.2, 0.1]
    res = fit(ramsey_3cos(), t, y, init)
    assert res.parameters == pytest.approx(truth, rel=1e-5, abs=1e-6)


def test_wrap_phase_range():
    out = wrap_phase(np.array([-math.pi, math.pi, 0.5, -0.5 - 2 * math.pi]))
    assert out == pytest.approx([math.pi, math.pi, 0.5, -0.5])


def test_multistart_picks_the_lowest_residual():
    t = np.linspace(0.0, 2e-6, 201)
    truth = [1.0, 2e6, 0.0, 5e-6, 0.0]
    y = damped_sin()(t, truth)
    starts = [[1.0, 7e6, 0.0, 5e-6, 0.0], [1.0, 2.05e6, 0.0, 5e-6, 0.0], [1.0, 2.05e6, 0.0, 5e-6, 0.0]]
    res = fit_multistart(damped_sin(), t, y, starts)
    assert res.as_dict()["frequency"] == pytest.approx(2e6, rel=1e-6)
    threaded = fit_multistart(damped_sin(), t, y, starts, workers=3)
    assert np.array_equal(threaded.parameters, res.parameters)
    with pytest.raises(FitError):
        fit_multistart(damped_sin(), t, y, [])
    with pytest.raises(FitError):
        fit_multistart(damped_sin(), t, y, [[np.nan] * 5])


def test_poisson_weighting_and_bad_weights():
    x = np.linspace(0.0, 5e-3, 30)
    y = model_exp_decay(x, [50.0, 1e-3, 100.0])
    res = fit(exp_decay(), x, y, [40.0, 2e-3, 90.0], weighting="poisson")
    assert res.as_dict()["tau"] == pytest.approx(1e-3, rel=1e-5)
    with pytest.raises(FitError):
        fit(exp_decay(), x, y, [40.0, 2e-3, 90.0], weighting="bogus")
    with pytest.raises(FitError):
        fit(exp_decay(), x, y, [40.0, 2e-3, 90.0], weighting=np.ones(3))


def test_fit_rejects_bad_data():
    model = exp_decay()
    with pytest.raises(FitError):
        fit(model, [0.0, 1.0], [1.0, 0.5], [1.0, 1.0, 0.0])
    with pytest.raises(FitError):
        fit(model, [0.0, 1.0, 2.0, np.inf], [1.0, 0.5, 0.2, 0.1], [1.0, 1.0, 0.0])
    with pytest.raises(FitError):
        fit(model, [0.0, 1.0, 2.0], [1.0, 0.5, 0.2], [1.0, 1.0])
    with pytest.raises(FitError):
        fit(model, [0.0, 1.0, 2.0], [1.0, 0.5], [1.0, 1.0, 0.0])


def test_initial_guess_needs_enough_features():
    f = np.linspace(0.0, 1.0, 50)
    flat = np.ones_like(f)
    with pytest.raises(UnderdeterminedError):
        initial_guess(lorentzian_multi(3), f, flat)
    with pytest.raises(UnderdeterminedError):
        initial_guess(ramsey_3cos(), f, flat)


def test_result_serialisation():
    x = np.linspace(0.0, 5.0, 20)
    res = fit(exp_decay(), x, model_exp_decay(x, [1.0, 2.0, 0.0]), [0.5, 1.0, 0.1])
    doc = json.loads(res.to_json())
    assert doc["model"] == "exp_decay"
    assert set(doc["parameters"]) == {"amplitude", "tau", "offset"}
    assert set(doc["uncertainties"]) == set(doc["parameters"])
    assert "tau" in res.report()


def test_six_dip_fit_recovers_two_hyperfine_triplets():
    # a small axial field separates the m_s = +1 and -1 triplets
    axis = np.asarray(TETRAHEDRAL_AXES[0])
    p = NVParameters(b_field=tuple(1e-3 * axis))
    f = np.linspace(2.83e9, 2.91e9, 1601)
    spec = odmr_spectrum([p], f, linewidth=0.5e6, contrast=0.1)
    span = float(spec.values.max() - spec.values.min())
    rng = np.random.default_rng(7)
    y = spec.values + rng.normal(scale=0.005 * span, size=f.size)
    res = fit_auto(lorentzian_multi(6), f, y)
    centers = [res.as_dict()[f"center_{i}"] for i in range(1, 7)]
    assert centers == sorted(centers)
    low, high = np.diff(centers[:3]), np.diff(centers[3:])
    assert np.allclose(low, 2.16e6, atol=0.1e6)
    assert np.allclose(high, 2.16e6, atol=0.1e6)
    assert res.residual_norm / math.sqrt(f.size) < 0.01 * span
