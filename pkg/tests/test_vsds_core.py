import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsds.ds_core import make_preset
from vsds.vsds_core import (
    CONSTANT_PAPER,
    SINUSOIDAL_PAPER,
    DegenerateDirectionError,
    StiffnessProfile,
    VsdsModel,
    build_rotation,
    build_vsds,
    eval_damping,
    eval_vsds_org,
    load_model_json,
    save_model_json,
    weights,
    weights_flagged,
)

coord = st.floats(-0.6, 0.6, allow_nan=False)


# build_rotation


def test_rotation_of_first_axis_is_identity():
    assert np.allclose(build_rotation([1.0, 0.0]), np.eye(2), atol=1e-15)


def test_rotation_convention_plus_90_degrees():
    q = build_rotation([0.0, 2.0])
    assert np.allclose(q[:, 0], [0.0, 1.0]) and np.allclose(q[:, 1], [-1.0, 0.0])


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=4))
def test_rotation_orthonormal_proper(d):
    d = np.array(d)
    if np.linalg.norm(d) <= 1e-6:
        return
    q = build_rotation(d)
    assert np.max(np.abs(q.T @ q - np.eye(len(d)))) <= 1e-12
    assert abs(np.linalg.det(q) - 1.0) <= 1e-12
    assert np.allclose(q[:, 0], d / np.linalg.norm(d))


def test_degenerate_direction():
    with pytest.raises(DegenerateDirectionError):
        build_rotation([0.0, 1e-14])


# build_vsds


def test_line_along_first_axis_gives_diagonal_springs(line_model):
    for A in line_model.A:
        assert np.allclose(A, np.diag([-1200.0, -1500.0]), atol=1e-9)


def test_two_springs_center_at_midpoint():
    x0 = np.array([-1.0, 0.0])
    model = build_vsds(make_preset("line", x0), CONSTANT_PAPER, [250.0, 250.0], x0, n=2)
    assert np.linalg.norm(model.centers[1] - x0) == pytest.approx(0.5, abs=1e-9)


def test_sinusoidal_stiffness_eigenvalues(curve_model):
    field = make_preset("curve")
    model = build_vsds(field, SINUSOIDAL_PAPER, "critical", np.array([-0.45, 0.10]), n=20)
    for x_l, A in zip(model.x_l, model.A):
        want = np.sort([950.0 + 150.0 * np.sin(15.0 * x_l[0] + 0.8), 1200.0 + 200.0 * np.sin(15.0 * x_l[0] + 0.8)])
        got = np.sort(np.linalg.eigvalsh(-A))
        assert np.allclose(got, want, rtol=1e-9, atol=0.0)


def test_model_invariants(curve_model):
    m = curve_model
    assert m.n_springs == 20
    assert np.array_equal(m.x_l[-1], [0.0, 0.0])
    assert np.allclose(m.centers[1:], 0.5 * (m.x_l[1:] + m.x_l[:-1]))
    assert np.all(m.eps > 0.0)
    rng = np.random.default_rng(1)
    for A, D in zip(m.A, m.D):
        assert np.allclose(A, A.T) and np.allclose(D, D.T)
        assert np.all(np.linalg.eigvalsh(D) > 0.0)
        for _ in range(10):
            v = rng.normal(size=2)
            v /= np.linalg.norm(v)
            assert v @ A @ v < 0.0


def test_damping_does_not_touch_stiffness():
    field = make_preset("angle")
    x0 = np.array([-0.40, 0.05])
    a = build_vsds(field, CONSTANT_PAPER, [200.0, 300.0], x0)
    b = build_vsds(field, CONSTANT_PAPER, [250.0, 250.0], x0)
    assert np.array_equal(a.A, b.A)


def test_stiffness_profiles_validate():
    with pytest.raises(ValueError):
        StiffnessProfile.constant([1.0, -1.0])
    with pytest.raises(ValueError):
        StiffnessProfile.sinusoidal([(100.0, 200.0, 1.0, 0.0)])
    with pytest.raises(ValueError):
        StiffnessProfile.tabulated([(0.5, 10.0, 10.0), (0.1, 10.0, 10.0)])
    tab = StiffnessProfile.tabulated([(0.0, 100.0, 200.0), (1.0, 300.0, 400.0)])
    assert np.allclose(tab.diag([0.5, 0.0]), [200.0, 300.0])


# weights


def test_weight_peaks_at_its_center():
    x0 = np.array([-0.5, 0.0])
    model = build_vsds(make_preset("line", x0), CONSTANT_PAPER, [250.0, 250.0], x0, eps_scale=0.3)
    for k in range(1, model.n_springs):
        assert int(np.argmax(weights(model, model.centers[k]))) == k


@given(coord, coord)
def test_weights_partition_of_unity(curve_model, x1, x2):
    w = weights(curve_model, [x1, x2])
    assert np.all(w >= 0.0)
    assert abs(w.sum() - 1.0) <= 1e-12


def test_far_point_falls_back_to_nearest_center(curve_model):
    x = np.array([50.0, 50.0])
    w, flagged = weights_flagged(curve_model, x)
    nearest = int(np.argmin(np.linalg.norm(curve_model.centers - x, axis=1)))
    assert flagged
    assert w[nearest] == 1.0 and w.sum() == 1.0


def test_weight_gradient_bounded(curve_model):
    # finite-difference gradient magnitude of w~ stays below the Gaussian bound
    h = 1e-7
    bound = 2.0 * np.max(1.6 / curve_model.eps)  # |x e^{-x^2/2}|' scale, generous
    grid = np.linspace(-0.5, 0.1, 25)
    for x1 in grid:
        for x2 in np.linspace(-0.1, 0.3, 15):
            x = np.array([x1, x2])
            g = [(weights(curve_model, x + h * e) - weights(curve_model, x - h * e)) / (2 * h) for e in np.eye(2)]
            assert np.all(np.isfinite(g))
            assert np.max(np.abs(g)) <= 10.0 * bound


# eval_vsds_org


def test_zero_force_at_final_attractor_with_one_hot(curve_model):
    w = np.zeros(curve_model.n_springs)
    w[-1] = 1.0
    assert np.allclose(eval_vsds_org(curve_model, np.zeros(2), w), 0.0)


def test_spring_consistency_at_each_attractor(curve_model):
    for i, x_l in enumerate(curve_model.x_l):
        w = np.zeros(curve_model.n_springs)
        w[i] = 1.0
        assert np.allclose(eval_vsds_org(curve_model, x_l, w), 0.0, atol=1e-12)


def test_isolated_kernel_matches_single_spring():
    x0 = np.array([-0.45, 0.10])
    model = build_vsds(make_preset("curve"), CONSTANT_PAPER, "critical", x0, eps_scale=0.05)
    rng = np.random.default_rng(3)
    for k in (3, 9, 15):
        x = model.centers[k] + 1e-3 * rng.normal(size=2)
        want = model.A[k] @ (x - model.x_l[k])
        assert np.allclose(eval_vsds_org(model, x), want, atol=1e-6)


def test_force_lipschitz_on_grid(curve_model):
    m = curve_model
    reach = 1.5
    # |d/dx sum w_i A_i (x - x_l)| <= max|A| (1 + 2 * reach / min eps) for |x - x_l| <= reach
    L = np.max(np.linalg.norm(m.A, ord=2, axis=(1, 2))) * (1.0 + 2.0 * reach / m.eps.min())
    rng = np.random.default_rng(7)
    for _ in range(300):
        x = rng.uniform(-0.6, 0.3, size=2)
        d = rng.normal(size=2) * 1e-4
        assert np.linalg.norm(eval_vsds_org(m, x + d) - eval_vsds_org(m, x)) <= L * np.linalg.norm(d)


# eval_damping


def test_equal_damping_everywhere(line_model):
    for x in ([-0.3, 0.01], [0.2, -0.4], [0.0, 0.0]):
        assert np.allclose(eval_damping(line_model, x), 250.0 * np.eye(2))


@given(coord, coord)
@settings(max_examples=60)
def test_damping_eigenvalues_within_spring_range(x1, x2):
    model = _anisotropic()
    eig_all = np.concatenate([np.linalg.eigvalsh(D) for D in model.D])
    got = np.linalg.eigvalsh(eval_damping(model, [x1, x2]))
    assert got.min() >= eig_all.min() - 1e-9 and got.max() <= eig_all.max() + 1e-9
    assert 200.0 - 1e-9 <= got.min() and got.max() <= 300.0 + 1e-9


_CACHE = {}


def _anisotropic():
    if "m" not in _CACHE:
        _CACHE["m"] = build_vsds(make_preset("w"), CONSTANT_PAPER, [200.0, 300.0], np.array([-0.5, 0.15]))
    return _CACHE["m"]


def test_model_json_round_trip(tmp_path, curve_model):
    path = tmp_path / "m.json"
    save_model_json(curve_model, path, {"note": 1})
    model, data = load_model_json(path)
    assert data["note"] == 1
    x = np.array([-0.2, 0.15])
    assert np.allclose(eval_vsds_org(model, x), eval_vsds_org(curve_model, x), atol=1e-12)
    assert isinstance(model, VsdsModel)
