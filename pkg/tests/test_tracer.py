import math

import numpy as np
import pytest

from chaostracer.spectrum_core import ParameterError, SpectrumParams
from chaostracer.tracer import (TrajectoryConfig, default_substeps, integrate_y_T, integrate_z_T,
                                lagrangian_series, msd_curve, simulate_tracers)
from chaostracer.velocity_field import FieldBatch, make_sampler

P = SpectrumParams()


def test_config_validation():
    for kw in (dict(dt=0.0), dict(t_max=0.01, dt=0.1), dict(T=0.5), dict(substeps=0),
               dict(integrator="leapfrog")):
        with pytest.raises(ParameterError):
            TrajectoryConfig(**kw)


def test_default_substeps():
    cfg = TrajectoryConfig(T=16, dt=0.25, courant=0.5)
    theta_max = 0.5 * 16 ** 1.5
    assert default_substeps(P, cfg) == math.ceil(theta_max * 0.25 / 0.5)
    assert default_substeps(P, TrajectoryConfig(substeps=7)) == 7


def test_offset_split_is_identical():
    cfg = TrajectoryConfig(T=4, t_max=0.5, dt=0.1, integrator="midpoint", courant=0.5)
    full = simulate_tracers(P, cfg, 12, 16, seed=5, want=("z", "y", "lagrangian"))
    a = simulate_tracers(P, cfg, 5, 16, seed=5, want=("z", "y", "lagrangian"))
    b = simulate_tracers(P, cfg, 7, 16, seed=5, want=("z", "y", "lagrangian"), offset=5)
    for key in ("z", "y", "lagrangian"):
        merged = np.concatenate([getattr(a, key), getattr(b, key)])
        assert np.array_equal(getattr(full, key), merged)


def test_chunking_is_invisible():
    cfg = TrajectoryConfig(T=4, t_max=0.3, dt=0.1, integrator="rk4", courant=0.5)
    a = simulate_tracers(P, cfg, 9, 16, seed=1, chunk=4)
    b = simulate_tracers(P, cfg, 9, 16, seed=1, chunk=9)
    assert np.array_equal(a.z, b.z)


def test_lagrangian_at_start_is_field_at_origin():
    cfg = TrajectoryConfig(T=4, t_max=0.2, dt=0.1, integrator="midpoint", courant=0.5)
    r = simulate_tracers(P, cfg, 6, 16, seed=2, want=("lagrangian",))
    fb = FieldBatch(P, "V_T", 16, 6, seed=2, T=4)
    assert np.allclose(r.lagrangian[:, 0], fb.velocity(np.zeros((6, 2))), rtol=1e-13)


def test_single_trajectory_and_replay():
    cfg = TrajectoryConfig(T=8, t_max=0.2, dt=0.1)
    tr = integrate_z_T(make_sampler(P, 16, "V_T", T=8, seed=3), cfg)
    assert tr.positions.shape == (3, 2)
    L = lagrangian_series(make_sampler(P, 16, "V_T", T=8, seed=3), tr)
    assert L.shape == (3, 2)
    # replay at t=0 is the field at the start point
    s = make_sampler(P, 16, "V_T", T=8, seed=3)
    from chaostracer.velocity_field import evaluate_field
    assert np.allclose(L[0], evaluate_field(s, 0.0, np.zeros(2)))
    with pytest.raises(ParameterError):
        lagrangian_series(make_sampler(P, 16, "V_T", T=8, seed=4), tr)
    y = integrate_y_T(make_sampler(P, 16, "V_T", T=8, seed=3), cfg)
    with pytest.raises(ParameterError):
        lagrangian_series(make_sampler(P, 16, "V_T", T=8, seed=3), y)


def test_sampler_must_match_T():
    with pytest.raises(ParameterError):
        integrate_z_T(make_sampler(P, 8, "V_T", T=4, seed=0), TrajectoryConfig(T=8))
    with pytest.raises(ParameterError):
        integrate_z_T(make_sampler(P, 8, "V", seed=0), TrajectoryConfig())


def test_msd_curve_brownian_oracle():
    rng = np.random.default_rng(0)
    steps = rng.standard_normal((4000, 20, 2)) * math.sqrt(0.1)
    X = np.concatenate([np.zeros((4000, 1, 2)), np.cumsum(steps, axis=1)], axis=1)
    t = np.arange(21) * 0.1
    rows = msd_curve(X, t, [0.5, 1.0, 2.0])
    # E|B(t)|^2 = d t
    z = np.abs(rows[:, 1] - 2 * rows[:, 0]) / rows[:, 2]
    assert np.all(z < 4)
    with pytest.raises(ValueError):
        msd_curve(X, t, [0.55])
    with pytest.raises(ValueError):
        msd_curve(X[:50], t, [0.5])


def test_gaussian_control_is_diffusive():
    cfg = TrajectoryConfig(T=8, t_max=2.0, dt=0.25, integrator="midpoint", courant=0.5)
    r = simulate_tracers(P, cfg, 400, 32, seed=4, control="gaussian_white")
    rows = msd_curve(r.z, r.times, [0.5, 1.0, 2.0])
    ratio = rows[2, 1] / rows[0, 1]
    assert abs(ratio - 4.0) < 4 * ratio * math.hypot(rows[2, 2] / rows[2, 1],
                                                     rows[0, 2] / rows[0, 1])
