import math

import numpy as np
import pytest

import qndspin


def test_tss_and_schedule():
    assert qndspin.tss_variance(1.5e6) == pytest.approx(1e6)
    assert qndspin.pulse_schedule() == "zyxzyx"
    assert qndspin.readout_noise_sigma() == pytest.approx(767.4, rel=1e-3)
    r = qndspin.larmor_rotation_matrix(np.ones(3) * 16.9e-3 / math.sqrt(3), 85e-6 / 3)
    assert np.allclose(r @ [0, 0, 1], [1, 0, 0], atol=1e-3)


def test_config_errors_are_collected():
    with pytest.raises(qndspin.ConfigError) as err:
        qndspin.normalize_config({"probe": {"g1": -1}, "bogus": 1})
    assert "2 problems" in str(err.value)
    cfg = qndspin.normalize_config({"campaign": {"n_cycles": 3}})
    assert cfg["campaign"]["n_cycles"] == 3
    assert qndspin.normalize_config(cfg) == cfg


def test_conditional_covariance_and_witness():
    g1 = np.diag([4.0, 4.0, 4.0])
    value, singular = qndspin.conditional_covariance(g1, g1 + np.eye(3), g1)
    assert not singular
    assert np.allclose(value, np.eye(3))
    w = qndspin.squeezing_parameter(5e5, 1e6)
    assert w["xi2"] == pytest.approx(0.5)
    assert w["ent_bound"] == pytest.approx(5e5)


def test_simulate_and_analyze():
    cfg = {"campaign": {"n_cycles": 30}, "analysis": {"bootstrap_resamples": 20, "bins": 3}}
    data = qndspin.simulate(cfg, workers=2)
    assert data["f1"].shape == (30 * 14, 3)
    assert int(data["is_reference"].sum()) == 60
    again = qndspin.simulate(cfg)
    assert np.array_equal(data["f1"], again["f1"])
    report = qndspin.analyze(data, cfg)
    assert len(report["bins"]) == 3
    assert report["n_atom_shots"] == 360
    assert report["v0"] > 0


def test_conditional_variance_matches_prediction():
    n = 1e6
    shots = qndspin.simulate_shots(n, 20000, seed=3)
    x = np.hstack([shots["f1"], shots["f2"]])
    c = np.cov(x, rowvar=False)
    cond = c[3:, 3:] - c[3:, :3] @ np.linalg.solve(c[:3, :3], c[:3, 3:])
    predicted = qndspin.predicted_conditional_covariance(n)
    assert np.trace(cond) == pytest.approx(np.trace(predicted), rel=0.03)


def test_fid_round_trip():
    b = np.array([9.6e-3, 9.7e-3, 9.9e-3])
    t = np.arange(0, 1.5e-3, 0.5e-6)
    z = qndspin.fid_signal(t, b, "z", 1e6, 9e-8, 745e-6)
    y = qndspin.fid_signal(t, b, "y", 1e6, 9e-8, 745e-6)
    est = qndspin.fit_fid(t, z, t, y)
    assert est["bx_mG"] == pytest.approx(9.6, rel=1e-3)
    assert est["bz_mG"] == pytest.approx(9.9, rel=1e-3)
    assert est["t2_us"] == pytest.approx(745, rel=1e-3)
    with pytest.raises(qndspin.DomainError):
        qndspin.fid_signal(t, b, "x", 1e6, 9e-8, 745e-6)
