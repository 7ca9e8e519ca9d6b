import numpy as np
import pytest

from vsds.acceptance import least_squares_oracle
from vsds.ds_core import LinearField, eval_field, make_preset
from vsds.energy_tank import PassifierParams, activation, potential_force
from vsds.feedforward import (
    DegenerateProblemError,
    FeedForwardField,
    ReferenceDataset,
    UnsolvedFieldError,
    assemble_qp,
    eval_ff_qp,
    ff_velocity_feedback,
    gammas_from_z,
    optimize_feedforward,
    simulate_reference,
    spring_field,
)
from vsds.qp_solver import solve_qp
from vsds.vsds_core import CONSTANT_PAPER, build_vsds, eval_damping, eval_vsds_org, weights


# velocity feedback


def test_velocity_feedback_zero_at_origin(line_model, line_field):
    assert np.array_equal(ff_velocity_feedback(line_model, line_field, np.zeros(2)), np.zeros(2))


def test_velocity_feedback_diagonal_product(line_model):
    # f_g(-0.1, 0) = (0.1, 0) for the unit linear field, D = 250 I on this model
    assert np.allclose(ff_velocity_feedback(line_model, LinearField(np.eye(2)), [-0.1, 0.0]), [25.0, 0.0])


def test_velocity_feedback_compositional(curve_model):
    field = curve_model.field
    rng = np.random.default_rng(2)
    for _ in range(50):
        x = rng.uniform(-0.5, 0.2, size=2)
        want = eval_damping(curve_model, x) @ eval_field(field, x)
        assert np.allclose(ff_velocity_feedback(curve_model, field, x), want, atol=1e-12, rtol=0.0)


@pytest.mark.parametrize("scale", [0.5, 2.0, 7.0])
def test_velocity_feedback_linear_in_field(line_model, scale):
    x = np.array([-0.2, 0.05])
    base = ff_velocity_feedback(line_model, LinearField(np.eye(2)), x)
    assert np.allclose(ff_velocity_feedback(line_model, LinearField(scale * np.eye(2)), x), scale * base)


# reference dataset


def test_reference_force_vanishes_for_linear_field():
    data = simulate_reference(LinearField(np.eye(2)), CONSTANT_PAPER, np.eye(2), [0.3, -0.2], dt=1e-3, t_final=20.0)
    assert np.linalg.norm(data.spring_forces[-1]) < 0.5


def test_reference_at_rest_has_no_force():
    data = simulate_reference(LinearField(np.eye(2)), CONSTANT_PAPER, np.eye(2), [0.0, 0.0], dt=1e-3, t_final=1.0)
    assert np.array_equal(data.spring_forces[0], [0.0, 0.0])


def test_reference_does_not_overshoot_the_attractor(line_field):
    data = simulate_reference(line_field, CONSTANT_PAPER, np.eye(2), [-0.5, 0.0], dt=1e-3, t_final=20.0, max_rows=None)
    assert data.positions[:, 0].max() <= 1e-3
    assert np.all(np.diff(data.times) > 0.0)


def test_reference_rejects_bad_mass(line_field):
    with pytest.raises(ValueError):
        simulate_reference(line_field, CONSTANT_PAPER, np.array([[1.0, 0.1], [0.1, 1.0]]), [-0.5, 0.0])


def test_dataset_csv_round_trip(tmp_path, line_field):
    data = simulate_reference(line_field, CONSTANT_PAPER, np.eye(2), [-0.5, 0.0], t_final=2.0, max_rows=100)
    assert len(data) <= 100
    path = tmp_path / "ref.csv"
    data.to_csv(path)
    back = ReferenceDataset.from_csv(path)
    assert np.array_equal(back.positions, data.positions) and np.array_equal(back.spring_forces, data.spring_forces)


def test_dataset_invariants():
    with pytest.raises(ValueError):
        ReferenceDataset([0.0, 0.0], np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ReferenceDataset([0.0, 1.0], np.zeros((3, 2)), np.zeros((2, 2)))


# QP assembly


@pytest.fixture(scope="module")
def toy():
    x0 = np.array([-0.3, 0.05])
    model = build_vsds(make_preset("curve", x0, amplitude=0.05), CONSTANT_PAPER, "critical", x0, n=2)
    pos = np.array([x0, [-0.2, 0.06], [-0.1, 0.02]])
    forces = np.array([[3.0, -1.0], [2.0, 0.5], [1.0, 0.2]])
    return model, ReferenceDataset([0.0, 0.1, 0.2], pos, forces)


def test_hessian_by_hand(toy, params):
    model, data = toy
    problem = assemble_qp(data, model, params, anchor=False)
    W = np.array([activation(params, x) * weights(model, x) for x in data.positions])  # 3 x 2
    Wa = np.zeros((6, 4))
    Wa[:3, :2] = W
    Wa[3:, 2:] = W
    assert np.allclose(problem.H, Wa.T @ Wa, atol=1e-13)
    f_s = np.array([activation(params, x) * eval_vsds_org(model, x) + potential_force(params, x) for x in data.positions])
    F_sh = np.concatenate([data.spring_forces[:, 0] - f_s[:, 0], data.spring_forces[:, 1] - f_s[:, 1]])
    assert np.allclose(problem.c, -Wa.T @ F_sh, atol=1e-12)


def test_sign_selection(toy, params):
    model, data = toy
    problem = assemble_qp(data, model, params, f_min=10.0, anchor=False)
    f0 = spring_field(model, params, data.positions[0])
    sigma = np.where(f0 >= 0.0, 1.0, -1.0)
    w0 = activation(params, data.positions[0]) * weights(model, data.positions[0])
    assert np.allclose(problem.A[0], np.concatenate([sigma[0] * w0, np.zeros(2)]))
    assert np.allclose(problem.A[1], np.concatenate([np.zeros(2), sigma[1] * w0]))
    assert np.allclose(problem.b, 10.0 - sigma * f0)


def test_sign_cases_both_ways(toy, params):
    model, data = toy
    flipped = ReferenceDataset(data.times, -data.positions, data.spring_forces)
    for d in (data, flipped):
        f0 = spring_field(model, params, d.positions[0])
        p = assemble_qp(d, model, params, anchor=False)
        block = p.A[:, : model.n_springs].sum(axis=1)[0]
        assert np.sign(block) == (1.0 if f0[0] >= 0.0 else -1.0)


def test_cost_identity(toy, params):
    model, data = toy
    problem = assemble_qp(data, model, params, anchor=False)
    W = np.array([activation(params, x) * weights(model, x) for x in data.positions])
    Wa = np.kron(np.eye(2), W)
    f_s = np.array([spring_field(model, params, x) for x in data.positions])
    F_sh = (data.spring_forces - f_s).T.reshape(-1)
    rng = np.random.default_rng(4)
    for _ in range(20):
        z = rng.normal(size=4) * 20
        lhs = np.sum((Wa @ z - F_sh) ** 2)
        rhs = 2.0 * problem.objective(z) + F_sh @ F_sh
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_anchor_rows_cancel_origin_bias(curve_model, params):
    data = simulate_reference(curve_model.field, CONSTANT_PAPER, np.eye(2), [-0.45, 0.10], t_final=20.0)
    ff = optimize_feedforward(data, curve_model, params)
    origin = np.zeros(2)
    assert np.allclose(eval_vsds_org(curve_model, origin) + eval_ff_qp(ff, curve_model, origin), 0.0, atol=1e-8)


def test_degenerate_dataset(line_model, params):
    data = ReferenceDataset([0.0, 1.0], np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(DegenerateProblemError):
        assemble_qp(data, line_model, params)


# solved field


def test_equal_gammas_give_constant_field(curve_model):
    ff = FeedForwardField("qp", np.tile([3.0, -2.0], (curve_model.n_springs, 1)))
    for x in ([-0.3, 0.1], [0.0, 0.0], [0.4, -0.7]):
        assert np.allclose(eval_ff_qp(ff, curve_model, x), [3.0, -2.0])


def test_one_hot_weight_gives_its_gamma():
    x0 = np.array([-0.45, 0.10])
    model = build_vsds(make_preset("curve"), CONSTANT_PAPER, "critical", x0, eps_scale=0.05)
    gam = np.arange(2 * model.n_springs, dtype=float).reshape(-1, 2)
    ff = FeedForwardField("qp", gam, lower=-100, upper=100)
    for k in (2, 10, 17):
        assert np.allclose(eval_ff_qp(ff, model, model.centers[k]), gam[k], atol=1e-9)


def test_unsolved_field():
    with pytest.raises(UnsolvedFieldError):
        eval_ff_qp(FeedForwardField("qp"), None, [0.0, 0.0])
    with pytest.raises(ValueError):
        FeedForwardField("qp", np.array([[50.0, 0.0]]))


@pytest.mark.parametrize("preset", ["line", "curve", "angle", "w"])
def test_initial_force_constraint_honoured(preset, params):
    field = make_preset(preset)
    x0 = field.points[0]
    model = build_vsds(field, CONSTANT_PAPER, "critical", x0)
    data = simulate_reference(field, CONSTANT_PAPER, np.eye(2), x0, t_final=20.0)
    ff = optimize_feedforward(data, model, params, (-40.0, 40.0), 10.0)
    assert ff.solution.status == "optimal"
    assert np.all(ff.gammas >= -40.0) and np.all(ff.gammas <= 40.0)
    f_vs = spring_field(model, params, x0) + activation(params, x0) * eval_ff_qp(ff, model, x0)
    assert np.all(np.abs(f_vs) >= 10.0 - 1e-9)


@pytest.mark.parametrize("preset,n", [("line", 3), ("curve", 4), ("w", 4)])
def test_qp_form_matches_least_squares_form(preset, n):
    p = PassifierParams()
    field = make_preset(preset)
    x0 = field.points[0]
    model = build_vsds(field, CONSTANT_PAPER, "critical", x0, n=n)
    data = simulate_reference(field, CONSTANT_PAPER, np.eye(2), x0, t_final=20.0, max_rows=50)
    assert len(data) <= 50
    sol = solve_qp(assemble_qp(data, model, p, (-40.0, 40.0), 10.0, anchor=False))
    oracle = least_squares_oracle(data, model, p, (-40.0, 40.0), 10.0)
    assert np.max(np.abs(gammas_from_z(sol.z, model) - oracle)) <= 1e-4
