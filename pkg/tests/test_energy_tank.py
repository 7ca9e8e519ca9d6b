import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vsds.energy_tank import (
    PassifierParams,
    TankState,
    activation,
    gates,
    passive_control,
    potential_force,
    potential_value,
    tank_rate,
    tank_step,
    unpassified_control,
)
from vsds.feedforward import FeedForwardField

energy = st.floats(0.0, 50.0, allow_nan=False)
power = st.floats(-100.0, 100.0, allow_nan=False)


def test_potential_values():
    p = PassifierParams(k_o=0.3)
    assert potential_value(p, [0.0, 0.0]) == 0.0
    assert potential_value(p, [0.1, 0.0]) == pytest.approx(0.3 * (1.0 - math.exp(-0.01 / 0.012)) + 0.01, rel=1e-14)
    x = np.array([2.0, 0.0])
    assert x @ x > 40 * p.zeta
    assert potential_value(p, x) == pytest.approx(p.k_o + p.tau_min * 4.0, abs=1e-9)


def test_potential_force_zero_and_inward(params):
    assert np.array_equal(potential_force(params, [0.0, 0.0]), [0.0, 0.0])
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.uniform(-1, 1, size=2)
        assert potential_force(params, x) @ x < 0.0


def test_potential_force_matches_finite_difference(params):
    h = 1e-6
    for x1 in np.linspace(-0.5, 0.5, 21):
        for x2 in np.linspace(-0.5, 0.5, 21):
            x = np.array([x1, x2])
            fd = [-(potential_value(params, x + h * e) - potential_value(params, x - h * e)) / (2 * h) for e in np.eye(2)]
            exact = potential_force(params, x)
            assert np.linalg.norm(fd - exact) <= 1e-6 * np.linalg.norm(exact)


def test_activation():
    p = PassifierParams(kappa_rate=10.0)
    assert activation(p, [0.0, 0.0]) == 0.0
    assert activation(p, [0.3, 0.4]) == pytest.approx(1.0 - math.exp(-5.0), rel=1e-14)
    r = np.linspace(0.0, 2.0, 200)
    vals = [activation(p, [v, 0.0]) for v in r]
    assert np.all(np.diff(vals) > 0.0) and max(vals) < 1.0


# gates


def test_gate_cases(params):
    assert gates(params, 0.0, 1.0)[1:] == (0.0, 0.0)
    alpha, beta, gamma = gates(params, params.s_max, -1.0)
    assert (alpha, beta, gamma) == (0.0, 0.0, 1.0)
    assert gates(params, 25.0, 0.5) == (params.alpha_fill, 1.0, 1.0)
    with pytest.raises(ValueError):
        gates(params, -1.0, 0.0)


@given(s=energy, z=power)
def test_gate_consistency(s, z):
    p = PassifierParams()
    alpha, beta, gamma = gates(p, s, z)
    assert 0.0 <= alpha <= p.alpha_fill
    assert 0.0 <= beta <= 1.0
    assert gamma >= beta


# tank_step


def test_tank_decay_at_rest(params):
    s0 = 30.0
    assert tank_rate(params, s0, np.zeros(2), np.zeros(2), np.eye(2), 0.0) == pytest.approx(-31.5)
    dt = 1e-4
    state = TankState(s0)
    for _ in range(10000):
        state = tank_step(params, state, np.zeros(2), np.zeros(2), np.eye(2), 0.0, dt)
    assert state.s == pytest.approx(s0 * math.exp(-1.05), rel=1e-4)


@given(x=st.floats(-1, 1), v=st.floats(-1, 1), z=st.floats(0.0, 100.0))
def test_empty_tank_cannot_be_drained(x, v, z):
    p = PassifierParams()
    assert tank_rate(p, 0.0, np.array([x, 0.0]), np.array([v, 0.0]), 250.0 * np.eye(2), z) >= 0.0


def test_pure_dissipation_fills_tank(params):
    v = np.array([0.2, -0.1])
    D = np.diag([250.0, 200.0])
    dt = 1e-3
    alpha = gates(params, 20.0, 0.0)[0]
    no_decay = params.replace(tank_decay=False)
    new = tank_step(no_decay, TankState(20.0), np.zeros(2), v, D, 0.0, dt)
    assert new.s - 20.0 == pytest.approx(alpha * v @ D @ v * dt, rel=1e-12)
    new = tank_step(params, TankState(20.0), np.zeros(2), v, D, 0.0, dt)
    assert new.s - 20.0 == pytest.approx((alpha * v @ D @ v - params.eta * 20.0) * dt, rel=1e-12)


@given(s=energy, z=st.floats(-1e5, 1e5), v=st.floats(-5, 5), x=st.floats(-1, 1))
def test_tank_stays_in_bounds(s, z, v, x):
    p = PassifierParams()
    new = tank_step(p, TankState(s), np.array([x, 0.0]), np.array([v, v]), 250.0 * np.eye(2), z, 1e-2)
    assert 0.0 <= new.s <= p.s_max


@given(s=energy, x1=st.floats(-1, 1), x2=st.floats(-1, 1))
def test_storage_decreases_at_rest(s, x1, x2):
    p = PassifierParams()
    rate = tank_rate(p, s, np.array([x1, x2]), np.zeros(2), np.eye(2), 0.0)
    assert rate <= -(p.eta - 1.0) * s + 1e-12


def test_params_validation():
    with pytest.raises(ValueError):
        PassifierParams(eta=1.0)
    with pytest.raises(ValueError):
        PassifierParams(alpha_fill=1.0)
    with pytest.raises(ValueError):
        PassifierParams(s0=60.0)
    with pytest.raises(ValueError):
        tank_step(PassifierParams(), TankState(1.0), np.zeros(2), np.zeros(2), np.eye(2), 0.0, 0.0)


# passive_control


def test_equilibrium_force_is_zero(line_model, params):
    F, z = passive_control(line_model, FeedForwardField("velocity-feedback"), params, TankState(30.0), np.zeros(2), np.zeros(2))
    assert np.array_equal(F, np.zeros(2)) and z == 0.0


def test_empty_tank_leaves_potential_and_damping(line_model, params):
    from vsds.vsds_core import eval_damping

    x = np.array([-0.3, 0.02])
    v = np.array([0.5, 0.0])  # moving along the path: z > 0
    F, z = passive_control(line_model, FeedForwardField("none"), params, TankState(0.0), x, v)
    assert z > 0.0
    assert np.allclose(F, potential_force(params, x) - eval_damping(line_model, x) @ v, atol=1e-12)


@pytest.mark.parametrize("v", [(0.1, 0.0), (-0.3, 0.05)])
def test_nominal_law_with_full_gamma(line_model, params, v):
    x = np.array([-0.25, 0.01])
    v = np.array(v)
    ff = FeedForwardField("velocity-feedback")
    F, z = passive_control(line_model, ff, params, TankState(25.0), x, v)
    assert gates(params, 25.0, z)[2] == 1.0
    assert np.allclose(F, unpassified_control(line_model, ff, params, x, v), atol=1e-12, rtol=0.0)
