"""
Dense feed-forward networks with hand-derived backpropagation for the
whitening and reconstruction losses, plus an ADAM optimizer.

All arithmetic is float64. Models, gradients and optimizer states are
immutable values: updates return new objects.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, LEAKY_SLOPE, Activation, LossKind
from core.exceptions import ConfigurationError, NumericError, ShapeError
from core.logging import get_logger
from ml.losses import reconstruction_value_and_grad, whitening_value_and_grad

logger = get_logger(__name__)


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class MLPModel:
    """One network: layer_sizes[0] inputs, layer_sizes[-1] outputs."""

    layer_sizes: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activation: Activation = Activation.TANH
    linear_tail: int = 2

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigurationError(f"invalid layer sizes {list(self.layer_sizes)}")
        n_layers = len(sizes) - 1
        if not 0 <= self.linear_tail <= n_layers:
            raise ConfigurationError(
                f"linear_tail={self.linear_tail} must be between 0 and the layer count {n_layers}"
            )
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError(f"expected {n_layers} weight/bias pairs")
        weights = tuple(_frozen(w) for w in self.weights)
        biases = tuple(_frozen(b) for b in self.biases)
        for layer, (w, b) in enumerate(zip(weights, biases)):
            expected = (sizes[layer + 1], sizes[layer])
            if w.shape != expected:
                raise ShapeError(f"weights[{layer}] has shape {w.shape}, expected {expected}")
            if b.shape != (sizes[layer + 1],):
                raise ShapeError(f"biases[{layer}] has shape {b.shape}, expected ({sizes[layer + 1]},)")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def is_activated(self, layer: int) -> bool:
        return layer < self.n_layers - self.linear_tail

    def parameters(self) -> List[np.ndarray]:
        """Parameters in the order W0, b0, W1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def with_parameters(self, params: Sequence[np.ndarray]) -> "MLPModel":
        if len(params) != 2 * self.n_layers:
            raise ShapeError(f"expected {2 * self.n_layers} parameter arrays, got {len(params)}")
        return MLPModel(
            layer_sizes=self.layer_sizes,
            weights=tuple(params[0::2]),
            biases=tuple(params[1::2]),
            activation=self.activation,
            linear_tail=self.linear_tail,
        )


@dataclass(frozen=True, eq=False)
class ModelGradients:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def parameters(self) -> List[np.ndarray]:
        grads = []
        for w, b in zip(self.weights, self.biases):
            grads.extend([w, b])
        return grads

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g ** 2) for g in self.parameters())))


@dataclass(frozen=True, eq=False)
class GradientSet:
    """Loss value and gradients for the encoder (and decoder, for reconstruction)."""

    loss: float
    encoder: ModelGradients
    decoder: Optional[ModelGradients] = None

    def norm(self) -> float:
        total = self.encoder.norm() ** 2
        if self.decoder is not None:
            total += self.decoder.norm() ** 2
        return float(np.sqrt(total))


@dataclass(frozen=True, eq=False)
class AdamState:
    first_moment: Tuple[np.ndarray, ...]
    second_moment: Tuple[np.ndarray, ...]
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps_adam: float = ADAM_EPSILON

    @classmethod
    def zeros_like(cls, model: MLPModel, **hyper) -> "AdamState":
        zeros = tuple(np.zeros_like(p) for p in model.parameters())
        return cls(first_moment=zeros, second_moment=tuple(z.copy() for z in zeros), **hyper)


# ----------------------------------------------------------------------------
# Initialisation and forward pass
# ----------------------------------------------------------------------------

def mlp_init(
    layer_sizes: Sequence[int],
    activation: Activation = Activation.TANH,
    linear_tail: int = 2,
    seed: int = 0,
) -> MLPModel:
    """Glorot-uniform weights, zero biases, deterministic in `seed`."""
    sizes = [int(s) for s in layer_sizes] if layer_sizes is not None else []
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ConfigurationError(f"invalid layer sizes {sizes}: need at least two positive sizes")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPModel(tuple(sizes), tuple(weights), tuple(biases), Activation(activation), linear_tail)


def _activate(kind: Activation, pre: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return np.tanh(pre)
    return np.where(pre > 0, pre, LEAKY_SLOPE * pre)


def _activation_derivative(kind: Activation, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return 1.0 - post ** 2
    return np.where(pre > 0, 1.0, LEAKY_SLOPE)


def _check_batch(model: MLPModel, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise ShapeError(
            f"batch of shape {batch.shape} does not match network input dimension {model.input_dim}"
        )
    return batch


def _forward_cached(model: MLPModel, batch: np.ndarray):
    cache = []
    h = batch
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        pre = h @ w.T + b
        post = _activate(model.activation, pre) if model.is_activated(layer) else pre
        cache.append((h, pre, post))
        h = post
    return h, cache


def mlp_forward(model: MLPModel, batch: np.ndarray) -> np.ndarray:
    """Evaluate the network on a K x d_in batch."""
    out, _ = _forward_cached(model, _check_batch(model, batch))
    return out


def _backprop(model: MLPModel, cache, grad_out: np.ndarray) -> Tuple[ModelGradients, np.ndarray]:
    grad_w = [None] * model.n_layers
    grad_b = [None] * model.n_layers
    grad = grad_out
    for layer in reversed(range(model.n_layers)):
        h_in, pre, post = cache[layer]
        if model.is_activated(layer):
            grad = grad * _activation_derivative(model.activation, pre, post)
        grad_w[layer] = grad.T @ h_in
        grad_b[layer] = grad.sum(axis=0)
        grad = grad @ model.weights[layer]
    return ModelGradients(tuple(grad_w), tuple(grad_b)), grad


# ----------------------------------------------------------------------------
# Loss gradients
# ----------------------------------------------------------------------------

def backward(
    encoder: MLPModel,
    loss_kind: LossKind,
    clouds: np.ndarray,
    *,
    sigma: Optional[float] = None,
    decoder: Optional[MLPModel] = None,
) -> GradientSet:
    """
    Exact gradient of a LOCA loss on a B x M x D stack of clouds.

    whitening:      needs `sigma`; differentiates through each embedded
                    cloud's empirical covariance (encoder only).
    reconstruction: needs `decoder`; gradients for encoder and decoder.
    """
    try:
        loss_kind = LossKind(loss_kind)
    except ValueError:
        raise ConfigurationError(f"unknown loss kind {loss_kind!r}")

    clouds = np.asarray(clouds, dtype=np.float64)
    if clouds.ndim != 3:
        raise ShapeError(f"clouds must be B x M x D, got shape {clouds.shape}")
    n_clouds, m, dim = clouds.shape
    points = _check_batch(encoder, clouds.reshape(n_clouds * m, dim))
    codes, enc_cache = _forward_cached(encoder, points)

    if loss_kind is LossKind.WHITENING:
        if sigma is None:
            raise ConfigurationError("whitening gradient requires sigma")
        value, grad_codes = whitening_value_and_grad(codes.reshape(n_clouds, m, -1), sigma)
        enc_grads, _ = _backprop(encoder, enc_cache, grad_codes.reshape(n_clouds * m, -1))
        return GradientSet(loss=value, encoder=enc_grads)

    if decoder is None:
        raise ConfigurationError("reconstruction gradient requires a decoder")
    if decoder.input_dim != encoder.output_dim:
        raise ShapeError(
            f"decoder input {decoder.input_dim} does not match encoder output {encoder.output_dim}"
        )
    recon, dec_cache = _forward_cached(decoder, codes)
    value, grad_recon = reconstruction_value_and_grad(recon, points)
    dec_grads, grad_codes = _backprop(decoder, dec_cache, grad_recon)
    enc_grads, _ = _backprop(encoder, enc_cache, grad_codes)
    return GradientSet(loss=value, encoder=enc_grads, decoder=dec_grads)


# ----------------------------------------------------------------------------
# Optimizer
# ----------------------------------------------------------------------------

def _parameter_name(index: int) -> str:
    kind = "weights" if index % 2 == 0 else "biases"
    return f"{kind}[{index // 2}]"


def adam_step(
    state: AdamState,
    model: MLPModel,
    grads: ModelGradients,
    lr: float,
) -> Tuple[AdamState, MLPModel]:
    """One bias-corrected ADAM update."""
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    params = model.parameters()
    grad_list = grads.parameters()
    if len(grad_list) != len(params) or len(state.first_moment) != len(params):
        raise ShapeError("gradients, optimizer state and model are not congruent")

    for index, (p, g) in enumerate(zip(params, grad_list)):
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {_parameter_name(index)} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(
                f"non-finite gradient in {_parameter_name(index)}",
                location=_parameter_name(index),
            )

    step = state.step_count + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    new_m, new_v, new_params = [], [], []
    for p, g, m, v in zip(params, grad_list, state.first_moment, state.second_moment):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps_adam))
        new_m.append(m)
        new_v.append(v)

    new_state = AdamState(
        first_moment=tuple(new_m),
        second_moment=tuple(new_v),
        step_count=step,
        beta1=state.beta1,
        beta2=state.beta2,
        eps_adam=state.eps_adam,
    )
    return new_state, model.with_parameters(new_params)
