import functools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsds.ds_core import (
    DomainError,
    IntegrationError,
    LinearField,
    MotionField,
    PRESET_STARTS,
    SamplingError,
    arc_length,
    eval_field,
    integrate_open_loop,
    load_polyline_csv,
    make_preset,
    polyline_field,
    sample_local_attractors,
)
from vsds.simulator import project_on_polyline

PRESETS = ("line", "curve", "angle", "w")
box = st.floats(-1.0, 1.0, allow_nan=False)


class Outward(MotionField):
    def _eval(self, x):
        return 5.0 * x


# eval_field


def test_linear_field_origin_and_unit_point():
    f = LinearField(np.eye(2))
    assert np.array_equal(eval_field(f, [0.0, 0.0]), [0.0, 0.0])
    assert np.allclose(eval_field(f, [1.0, 0.0]), [-1.0, 0.0])


def test_non_finite_input_rejected():
    with pytest.raises(DomainError):
        eval_field(LinearField(np.eye(2)), [np.nan, 0.0])
    with pytest.raises(DomainError):
        eval_field(make_preset("curve"), [np.inf, 0.0])


def test_linear_gain_must_be_hurwitz():
    with pytest.raises(ValueError):
        LinearField(-np.eye(2))


def _polyline():
    pts = np.array([[-0.4, 0.2], [-0.2, 0.3], [0.0, 0.0]])
    return polyline_field(pts, speeds=[0.3, 0.2, 0.1]), pts


def test_polyline_first_waypoint_is_tangent_times_speed():
    f, pts = _polyline()
    t0 = (pts[1] - pts[0]) / np.linalg.norm(pts[1] - pts[0])
    assert np.allclose(eval_field(f, pts[0]), 0.3 * t0, atol=1e-12)


def test_polyline_corner_waypoint_blends_both_tangents():
    # both segments are at distance zero, so they share the weight equally
    f, pts = _polyline()
    t0 = (pts[1] - pts[0]) / np.linalg.norm(pts[1] - pts[0])
    t1 = (pts[2] - pts[1]) / np.linalg.norm(pts[2] - pts[1])
    assert np.allclose(eval_field(f, pts[1]), 0.2 * 0.5 * (t0 + t1), atol=1e-12)


def test_polyline_csv(tmp_path):
    path = tmp_path / "wp.csv"
    path.write_text("x1,x2,speed\n-0.4,0.2,0.3\n-0.2,0.3,0.2\n0.0,0.0,0.1\n")
    f = load_polyline_csv(path)
    ref, pts = _polyline()
    assert np.allclose(f.points, pts)
    assert np.allclose(eval_field(f, [-0.3, 0.1]), eval_field(ref, [-0.3, 0.1]))
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n0,0\n")
    with pytest.raises(ValueError):
        load_polyline_csv(bad)


@pytest.mark.parametrize("name", PRESETS)
def test_attractor_is_fixed_point(name):
    assert np.array_equal(eval_field(make_preset(name), np.zeros(2)), np.zeros(2))


@pytest.mark.parametrize("name", PRESETS)
@given(x1=box, x2=box)
@settings(max_examples=60)
def test_field_nonzero_away_from_origin(name, x1, x2):
    x = np.array([x1, x2])
    if np.linalg.norm(x) < 1e-9:
        return
    assert np.linalg.norm(eval_field(make_preset(name), x)) > 0.0


# integrate_open_loop


def test_linear_rollout_decays_monotonically():
    t, xs = integrate_open_loop(LinearField(np.eye(2)), [1.0, 0.0], dt=1e-2, t_final=5.0)
    assert np.all(np.diff(xs[:, 0]) < 0.0)
    assert np.all(np.diff(t) > 0.0)
    assert xs[-1, 0] == pytest.approx(math.exp(-5.0), rel=1e-6)


def test_rollout_from_origin_is_single_sample():
    t, xs = integrate_open_loop(LinearField(np.eye(2)), [0.0, 0.0])
    assert t.tolist() == [0.0] and xs.shape == (1, 2)


def test_min_jerk_line_reaches_origin():
    _, xs = integrate_open_loop(make_preset("line", (0.0, 0.1)), [0.0, 0.1], dt=1e-3, t_final=20.0)
    assert np.linalg.norm(xs[-1]) <= 1e-4


def test_divergence_names_the_step():
    with pytest.raises(IntegrationError, match="step"):
        integrate_open_loop(Outward(), [0.5, 0.0], dt=1e-2, t_final=5.0)


def test_bad_step_arguments():
    with pytest.raises(ValueError):
        integrate_open_loop(LinearField(np.eye(2)), [1.0, 0.0], dt=0.0)
    with pytest.raises(ValueError):
        integrate_open_loop(LinearField(np.eye(2)), [1.0, 0.0], dt=1e-2, t_final=1e-3)


@pytest.mark.parametrize("name", PRESETS)
@given(x1=box, x2=box)
@settings(max_examples=4)
def test_open_loop_convergence_from_workspace(name, x1, x2):
    _, xs = integrate_open_loop(make_preset(name), [x1, x2], dt=2e-3, t_final=30.0)
    assert np.linalg.norm(xs[-1]) < 1e-3


# sample_local_attractors


def test_line_sampling_three_points():
    pts = sample_local_attractors(make_preset("line", (1.0, 0.0)), [1.0, 0.0], 3)
    assert np.allclose(pts, [[1.0, 0.0], [0.5, 0.0], [0.0, 0.0]], atol=1e-9)


def test_two_samples_are_ends():
    x0 = np.array(PRESET_STARTS["curve"])
    pts = sample_local_attractors(make_preset("curve"), x0, 2)
    assert np.array_equal(pts[0], x0) and np.array_equal(pts[1], [0.0, 0.0])


def test_sampling_at_origin_fails():
    with pytest.raises(SamplingError):
        sample_local_attractors(LinearField(np.eye(2)), [0.0, 0.0], 5)
    with pytest.raises(ValueError):
        sample_local_attractors(LinearField(np.eye(2)), [1.0, 0.0], 1)


@functools.lru_cache(maxsize=None)
def _fine_rollout(name):
    _, fine = integrate_open_loop(make_preset(name), PRESET_STARTS[name], dt=2.5e-4, t_final=60.0)
    return np.vstack([fine, np.zeros(2)])


def _curve_spacings(name, n):
    """Arc-length spacing of the samples measured along an independent, finer rollout."""
    pts = sample_local_attractors(make_preset(name), np.array(PRESET_STARTS[name]), n)
    fine = _fine_rollout(name)
    dist, arc = project_on_polyline(pts, fine, resolution=2e-5)
    return pts, dist, np.diff(arc)


def test_curve_sampling_equal_arc_length():
    _, dist, spacing = _curve_spacings("curve", 20)
    assert dist.max() < 1e-4
    assert np.max(np.abs(spacing / spacing.mean() - 1.0)) <= 0.02


@pytest.mark.parametrize("name", PRESETS)
@given(n=st.integers(3, 30))
@settings(max_examples=5)
def test_sampling_monotone_and_uniform(name, n):
    pts, _, spacing = _curve_spacings(name, n)
    assert np.all(np.diff(arc_length(pts)) > 0.0)
    assert np.all(spacing > 0.0)
    assert np.max(np.abs(spacing / spacing.mean() - 1.0)) <= 0.02
