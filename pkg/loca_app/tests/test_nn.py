import numpy as np
import pytest

from core.constants import Activation, LossKind
from core.exceptions import ConfigurationError, NumericError, ShapeError
from ml.datasets import BurstDataset
from ml.loca import reconstruction_loss, whitening_loss
from ml.nn import AdamState, MLPModel, ModelGradients, adam_step, backward, mlp_forward, mlp_init

STEP = 1e-5
N_COORDINATES = 60


def _relative_error(numeric: float, analytic: float) -> float:
    """Denominator floored at 1e-3 so near-zero partials compare absolutely"""
    return abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-3)


def _perturbed(model, index, flat, delta):
    params = [p.copy() for p in model.parameters()]
    np.put(params[index], flat, params[index].ravel()[flat] + delta)
    return model.with_parameters(params)


def _coordinates(model, n, rng):
    """(parameter index, flat offset) pairs spread over every layer"""
    sizes = [p.size for p in model.parameters()]
    out = []
    for _ in range(n):
        index = int(rng.integers(len(sizes)))
        out.append((index, int(rng.integers(sizes[index]))))
    return out


@pytest.fixture
def small_problem():
    rng = np.random.default_rng(21)
    anchors = rng.uniform(-1, 1, size=(4, 3))
    clouds = anchors[:, None, :] + 0.2 * rng.normal(size=(4, 6, 3))
    dataset = BurstDataset(anchors=anchors, clouds=clouds)
    encoder = mlp_init([3, 5, 4, 2], Activation.TANH, linear_tail=1, seed=8)
    decoder = mlp_init([2, 4, 5, 3], Activation.LEAKY_RELU, linear_tail=1, seed=9)
    return dataset, encoder, decoder


def test_whitening_gradient_matches_finite_differences(small_problem):
    """Central differences with step 1e-5; relative error uses a 1e-3 denominator floor"""
    dataset, encoder, _ = small_problem
    sigma = 0.2
    grads = backward(encoder, LossKind.WHITENING, dataset.clouds, sigma=sigma)
    assert grads.decoder is None
    assert grads.loss == pytest.approx(whitening_loss(encoder, dataset, sigma), rel=1e-12)

    analytic = grads.encoder.parameters()
    worst = 0.0
    for index, flat in _coordinates(encoder, N_COORDINATES, np.random.default_rng(0)):
        plus = whitening_loss(_perturbed(encoder, index, flat, STEP), dataset, sigma)
        minus = whitening_loss(_perturbed(encoder, index, flat, -STEP), dataset, sigma)
        numeric = (plus - minus) / (2 * STEP)
        worst = max(worst, _relative_error(numeric, analytic[index].ravel()[flat]))
    assert worst < 1e-5


def test_reconstruction_gradient_matches_finite_differences(small_problem):
    dataset, encoder, decoder = small_problem
    grads = backward(encoder, LossKind.RECONSTRUCTION, dataset.clouds, decoder=decoder)
    assert grads.loss == pytest.approx(reconstruction_loss(encoder, decoder, dataset), rel=1e-12)

    rng = np.random.default_rng(1)
    worst = 0.0
    for index, flat in _coordinates(encoder, N_COORDINATES // 2, rng):
        plus = reconstruction_loss(_perturbed(encoder, index, flat, STEP), decoder, dataset)
        minus = reconstruction_loss(_perturbed(encoder, index, flat, -STEP), decoder, dataset)
        numeric = (plus - minus) / (2 * STEP)
        worst = max(worst, _relative_error(numeric, grads.encoder.parameters()[index].ravel()[flat]))
    for index, flat in _coordinates(decoder, N_COORDINATES // 2, rng):
        plus = reconstruction_loss(encoder, _perturbed(decoder, index, flat, STEP), dataset)
        minus = reconstruction_loss(encoder, _perturbed(decoder, index, flat, -STEP), dataset)
        numeric = (plus - minus) / (2 * STEP)
        worst = max(worst, _relative_error(numeric, grads.decoder.parameters()[index].ravel()[flat]))
    assert worst < 1e-5


def test_backward_argument_checks(small_problem):
    dataset, encoder, decoder = small_problem
    with pytest.raises(ConfigurationError):
        backward(encoder, "contrastive", dataset.clouds, sigma=0.1)
    with pytest.raises(ConfigurationError):
        backward(encoder, LossKind.WHITENING, dataset.clouds)
    with pytest.raises(ConfigurationError):
        backward(encoder, LossKind.RECONSTRUCTION, dataset.clouds)
    with pytest.raises(ShapeError):
        backward(encoder, LossKind.WHITENING, dataset.clouds[..., :2], sigma=0.1)
    wrong_decoder = mlp_init([3, 3], Activation.TANH, linear_tail=1)
    with pytest.raises(ShapeError):
        backward(encoder, LossKind.RECONSTRUCTION, dataset.clouds, decoder=wrong_decoder)


def test_init_is_deterministic_and_glorot_bounded():
    first = mlp_init([5, 50, 50, 2, 2], Activation.TANH, linear_tail=2, seed=3)
    second = mlp_init([5, 50, 50, 2, 2], Activation.TANH, linear_tail=2, seed=3)
    other = mlp_init([5, 50, 50, 2, 2], Activation.TANH, linear_tail=2, seed=4)
    for a, b in zip(first.parameters(), second.parameters()):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(first.weights[0], other.weights[0])
    for w, b in zip(first.weights, first.biases):
        fan_out, fan_in = w.shape
        assert np.all(np.abs(w) <= np.sqrt(6.0 / (fan_in + fan_out)))
        np.testing.assert_array_equal(b, 0.0)
    assert [first.is_activated(layer) for layer in range(4)] == [True, True, False, False]


def test_invalid_networks_are_rejected():
    with pytest.raises(ConfigurationError):
        mlp_init([3], Activation.TANH)
    with pytest.raises(ConfigurationError):
        mlp_init([3, 0, 2], Activation.TANH)
    with pytest.raises(ConfigurationError):
        mlp_init([3, 2], Activation.TANH, linear_tail=2)


def test_models_are_immutable():
    model = mlp_init([2, 3], Activation.TANH, linear_tail=1)
    with pytest.raises(ValueError):
        model.weights[0][0, 0] = 1.0


def test_forward_checks_input_width():
    model = mlp_init([3, 4, 2], Activation.TANH, linear_tail=1)
    assert mlp_forward(model, np.zeros((5, 3))).shape == (5, 2)
    with pytest.raises(ShapeError):
        mlp_forward(model, np.zeros((5, 2)))


def test_leaky_relu_forward():
    model = mlp_init([1, 1], Activation.LEAKY_RELU, linear_tail=0)
    model = model.with_parameters([np.array([[1.0]]), np.array([0.0])])
    out = mlp_forward(model, np.array([[2.0], [-2.0]]))
    np.testing.assert_allclose(out[:, 0], [2.0, -0.02])


def test_first_adam_step_moves_by_learning_rate():
    """Bias correction makes the first step lr * sign(g), up to eps_adam"""
    model = mlp_init([2, 3], Activation.TANH, linear_tail=1, seed=0)
    grads = ModelGradients(
        weights=(np.array([[1.0, -2.0], [0.5, -0.1], [3.0, 4.0]]),),
        biases=(np.array([-1.0, 2.0, 0.25]),),
    )
    state = AdamState.zeros_like(model)
    new_state, updated = adam_step(state, model, grads, lr=1e-3)
    assert new_state.step_count == 1
    for old, new, g in zip(model.parameters(), updated.parameters(), grads.parameters()):
        np.testing.assert_allclose(old - new, 1e-3 * np.sign(g), rtol=1e-6)
    # inputs are untouched
    np.testing.assert_array_equal(state.first_moment[0], 0.0)


def test_adam_reports_nonfinite_gradients():
    model = mlp_init([2, 3], Activation.TANH, linear_tail=1)
    grads = ModelGradients(weights=(np.zeros((3, 2)),), biases=(np.array([0.0, np.nan, 0.0]),))
    with pytest.raises(NumericError) as excinfo:
        adam_step(AdamState.zeros_like(model), model, grads, lr=1e-3)
    assert excinfo.value.location == "biases[0]"


def test_adam_rejects_bad_inputs():
    model = mlp_init([2, 3], Activation.TANH, linear_tail=1)
    grads = ModelGradients(weights=(np.zeros((3, 2)),), biases=(np.zeros(3),))
    with pytest.raises(ConfigurationError):
        adam_step(AdamState.zeros_like(model), model, grads, lr=0.0)
    bad = ModelGradients(weights=(np.zeros((2, 2)),), biases=(np.zeros(3),))
    with pytest.raises(ShapeError):
        adam_step(AdamState.zeros_like(model), model, bad, lr=1e-3)


def test_adam_step_with_zero_gradient_keeps_parameters():
    model = mlp_init([2, 3, 2], Activation.TANH, linear_tail=1, seed=5)
    zero = ModelGradients(
        weights=tuple(np.zeros_like(w) for w in model.weights),
        biases=tuple(np.zeros_like(b) for b in model.biases),
    )
    state, updated = adam_step(AdamState.zeros_like(model), model, zero, lr=1e-2)
    assert state.step_count == 1
    for old, new in zip(model.parameters(), updated.parameters()):
        np.testing.assert_array_equal(old, new)
    state, updated = adam_step(state, updated, zero, lr=1e-2)
    assert state.step_count == 2


def test_repeated_adam_steps_move_against_the_gradient():
    model = mlp_init([2, 3], Activation.TANH, linear_tail=1, seed=0)
    grads = ModelGradients(
        weights=(np.array([[1.0, -2.0], [0.5, -0.1], [3.0, -4.0]]),),
        biases=(np.array([-1.0, 2.0, 0.25]),),
    )
    state = AdamState.zeros_like(model)
    state, once = adam_step(state, model, grads, lr=1e-3)
    state, twice = adam_step(state, once, grads, lr=1e-3)
    assert state.step_count == 2
    for p0, p1, p2, g in zip(model.parameters(), once.parameters(), twice.parameters(), grads.parameters()):
        assert np.all(np.sign(p1 - p0) == -np.sign(g))
        assert np.all(np.sign(p2 - p1) == -np.sign(g))


def test_reconstruction_gradient_vanishes_at_the_identity(small_problem, identity_mlp):
    dataset, _, _ = small_problem
    grads = backward(identity_mlp(3), LossKind.RECONSTRUCTION, dataset.clouds, decoder=identity_mlp(3))
    assert grads.loss == pytest.approx(0.0, abs=1e-24)
    assert grads.norm() < 1e-12


def test_whitening_gradient_vanishes_on_whitened_clouds(whitened_dataset, identity_mlp):
    dataset = whitened_dataset(n=12, sigma=0.1)
    grads = backward(identity_mlp(2), LossKind.WHITENING, dataset.clouds, sigma=0.1)
    assert grads.decoder is None
    assert grads.norm() < 1e-10


def test_zero_model_outputs_zeros():
    weights = (np.zeros((4, 3)), np.zeros((2, 4)))
    model = MLPModel((3, 4, 2), weights, (np.zeros(4), np.zeros(2)), Activation.TANH, linear_tail=1)
    out = mlp_forward(model, np.random.default_rng(0).normal(size=(7, 3)))
    np.testing.assert_array_equal(out, np.zeros((7, 2)))


def test_affine_and_saturating_layers():
    shift = MLPModel((2, 2), (np.eye(2),), (np.ones(2),), Activation.TANH, linear_tail=1)
    np.testing.assert_array_equal(mlp_forward(shift, np.zeros((1, 2))), [[1.0, 1.0]])

    squash = MLPModel((2, 2), (np.eye(2),), (np.zeros(2),), Activation.TANH, linear_tail=0)
    out = mlp_forward(squash, np.array([[1e6, -1e6]]))
    np.testing.assert_allclose(out, [[1.0, -1.0]], atol=1e-9)


def test_fully_linear_network_is_affine():
    """With every layer in the linear tail, f(a x + b y) = a f(x) + b f(y) + (1 - a - b) f(0)"""
    model = mlp_init([3, 5, 4, 2], Activation.TANH, linear_tail=3, seed=2)
    rng = np.random.default_rng(3)
    params = model.parameters()
    biased = model.with_parameters([p if p.ndim == 2 else rng.normal(size=p.shape) for p in params])
    x, y = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    a, b = 0.3, -1.7
    left = mlp_forward(biased, a * x + b * y)
    origin = mlp_forward(biased, np.zeros((6, 3)))
    right = a * mlp_forward(biased, x) + b * mlp_forward(biased, y) + (1 - a - b) * origin
    np.testing.assert_allclose(left, right, atol=1e-12)
