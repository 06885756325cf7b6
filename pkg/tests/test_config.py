"""Configuration defaults, validation, file round-trip and RNG streams."""

import math

import numpy as np
import pytest

from isactrack.config import (ConfigError, ScenarioConfig, SystemConfig,
                              load_config, noise_variance, rng_stream,
                              save_config, with_updates)

REL = 1e-12


def test_default_consistency():
    cfg = SystemConfig()
    assert abs(cfg.W - cfg.M * cfg.delta_f) <= REL * cfg.W
    # symbol duration = 1/delta_f + cp, cp is one sixth of the core symbol
    t0 = (1.0 + 1.0 / 6.0) / 1.6e6
    assert abs(cfg.T_0 - t0) <= REL * t0
    assert abs(cfg.T_0 - 7.2917e-7) < 1e-11
    assert abs(noise_variance(cfg) - 3.2e-13) <= REL * 3.2e-13
    assert abs(cfg.wavelength - cfg.c / 90e9) <= REL * cfg.wavelength
    assert cfg.fov_set == (7.0, 10.0, 15.0, 20.0)
    assert cfg.N_a == 64 and cfg.N_rf == 4 and cfg.M == 100


def test_bandwidth_mismatch_rejected():
    with pytest.raises(ConfigError, match="bandwidth mismatch"):
        SystemConfig(W=1.0e8, M=100, delta_f=1.6e6)


def test_parameter_validation():
    with pytest.raises(ConfigError):
        SystemConfig(N_rf=8, D=8)          # need N_rf < D
    with pytest.raises(ConfigError):
        SystemConfig(D=100, N_a=64)        # need D <= N_a
    with pytest.raises(ConfigError):
        SystemConfig(P_fa=0.0)
    with pytest.raises(ConfigError):
        SystemConfig(fov_set=(10.0, 7.0))  # must be increasing
    with pytest.raises(ConfigError):
        SystemConfig(delta_T=-0.1)
    with pytest.raises(ConfigError):
        ScenarioConfig(v_min=5.0, v_init=4.0).validate()
    with pytest.raises(ConfigError):
        ScenarioConfig(d_min=50.0, d_max=40.0).validate()


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    assert load_config(p) == SystemConfig()


def test_round_trip(tmp_path):
    cfg = with_updates(SystemConfig(), N_a=32, D=6, seed=7, delta_T=0.2,
                       scenario_waypoints=((0.0, 30.0), (10.0, 60.0)),
                       scenario_v_max=10.0)
    p = tmp_path / "cfg.txt"
    save_config(cfg, p)
    assert load_config(p) == cfg


def test_bad_keys_and_lines_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("no_such_key = 3\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(p)
    p.write_text("just words\n")
    with pytest.raises(ConfigError, match="key = value"):
        load_config(p)
    p.write_text("N_a = sixty-four\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(p)


def test_file_comments_and_scenario_prefix(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("# comment\nN_a = 32  # trailing\nscenario.d_max = 80\n"
                 "scenario.waypoints = 0,30; 5,60\n")
    cfg = load_config(p)
    assert cfg.N_a == 32
    assert cfg.scenario.d_max == 80.0
    assert cfg.scenario.waypoints == ((0.0, 30.0), (5.0, 60.0))


def test_with_updates_routes_and_revalidates():
    cfg = SystemConfig()
    up = with_updates(cfg, N_a=32, scenario_margin_deg=4.0)
    assert up.N_a == 32 and up.scenario.margin_deg == 4.0
    assert cfg.N_a == 64  # original untouched
    with pytest.raises(ConfigError):
        with_updates(cfg, delta_f=2.0e6)  # breaks W = M * delta_f


def test_rng_streams_deterministic_and_separate():
    a1 = rng_stream(3, "simulation", 5).standard_normal(8)
    a2 = rng_stream(3, "simulation", 5).standard_normal(8)
    b = rng_stream(3, "trajectory", 5).standard_normal(8)
    c = rng_stream(3, "simulation", 6).standard_normal(8)
    assert np.array_equal(a1, a2)
    assert not np.allclose(a1, b)
    assert not np.allclose(a1, c)
    with pytest.raises(ValueError, match="unknown stream"):
        rng_stream(3, "nope")
