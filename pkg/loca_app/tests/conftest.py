import hypothesis
import numpy as np
import pytest

from core.constants import Activation
from ml.datasets import BurstDataset
from ml.loca import TrainedLoca
from ml.manifolds import Region2D, sample_plane_bursts
from ml.nn import MLPModel, mlp_init
from schemas.config import TrainConfig

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.load_profile("fast")


def _cross_cloud(center: np.ndarray, variances) -> np.ndarray:
    """2k points +-a_i e_i around `center` whose sample covariance is exactly diag(variances)."""
    variances = np.asarray(variances, dtype=np.float64)
    dim = variances.size
    m = 2 * dim
    # +-a along one axis contributes 2a^2 / (m - 1) to that axis' variance
    amplitude = np.sqrt(variances * (m - 1) / 2.0)
    offsets = np.zeros((m, dim))
    for axis in range(dim):
        offsets[2 * axis, axis] = amplitude[axis]
        offsets[2 * axis + 1, axis] = -amplitude[axis]
    return center + offsets


@pytest.fixture
def cross_cloud():
    return _cross_cloud


@pytest.fixture
def whitened_dataset():
    """Clouds whose covariance is exactly sigma^2 I at random anchors."""

    def build(n=20, dim=2, sigma=0.1, seed=0) -> BurstDataset:
        anchors = np.random.default_rng(seed).uniform(0, 1, size=(n, dim))
        clouds = np.stack([_cross_cloud(a, [sigma ** 2] * dim) for a in anchors])
        return BurstDataset(anchors=anchors, clouds=clouds, sigma=sigma)

    return build


@pytest.fixture
def identity_mlp():
    def build(dim: int) -> MLPModel:
        return MLPModel((dim, dim), (np.eye(dim),), (np.zeros(dim),), Activation.TANH, linear_tail=1)

    return build


@pytest.fixture(scope="session")
def plane_dataset() -> BurstDataset:
    """Small mushroom-style dataset."""
    return sample_plane_bursts(Region2D.unit_square(), n=40, m=10, sigma=0.05, seed=3)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return TrainConfig(
        encoder_layers=[8, 2],
        decoder_layers=[8, 2],
        linear_tail=1,
        batch_clouds=8,
        lr_schedule=[1e-3],
        eval_every=1,
        patience=5,
        max_epochs_per_stage=3,
        seed=7,
    )


@pytest.fixture
def random_model():
    def build(ambient_dim=2, embedding_dim=2, hidden=6, seed=0) -> TrainedLoca:
        encoder = mlp_init([ambient_dim, hidden, embedding_dim], Activation.TANH, linear_tail=1, seed=seed)
        decoder = mlp_init([embedding_dim, hidden, ambient_dim], Activation.LEAKY_RELU, linear_tail=1, seed=seed + 1)
        return TrainedLoca(
            encoder=encoder,
            decoder=decoder,
            sigma_used=0.1,
            loss_history=(),
            seed=seed,
            embedding_dim=embedding_dim,
        )

    return build
