"""
Array-level definitions of the two LOCA losses.

Both losses are written against already-embedded points so that the
network code (ml/nn.py) can reuse the same formulas for the value and for
the gradient it backpropagates.
"""

from typing import Tuple

import numpy as np

from core.exceptions import ConfigurationError, DegenerateCloudError, ShapeError


def empirical_covariance(cloud: np.ndarray) -> np.ndarray:
    """Sample covariance of an M x k cloud about its mean, denominator M - 1."""
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2:
        raise ShapeError(f"cloud must be a 2-D array, got shape {cloud.shape}")
    if cloud.shape[0] < 2:
        raise DegenerateCloudError(f"cloud has {cloud.shape[0]} point(s), need at least 2")
    centered = cloud - cloud.mean(axis=0)
    cov = centered.T @ centered / (cloud.shape[0] - 1)
    return 0.5 * (cov + cov.T)


def batched_covariance(clouds: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Covariances of a B x M x k stack of clouds.

    Returns (covariances B x k x k, centered clouds B x M x k).
    """
    if clouds.ndim != 3:
        raise ShapeError(f"clouds must be a 3-D array, got shape {clouds.shape}")
    m = clouds.shape[1]
    if m < 2:
        raise DegenerateCloudError(f"clouds have {m} point(s), need at least 2")
    centered = clouds - clouds.mean(axis=1, keepdims=True)
    cov = np.einsum("bmi,bmj->bij", centered, centered) / (m - 1)
    return cov, centered


def whitening_value_and_grad(embedded: np.ndarray, sigma: float) -> Tuple[float, np.ndarray]:
    """
    Mean over clouds of ||C_i / sigma^2 - I||_F^2 and its gradient with
    respect to the embedded cloud points (same shape as `embedded`).
    """
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    n_clouds, m, d = embedded.shape
    sigma2 = sigma * sigma
    cov, centered = batched_covariance(embedded)
    deviation = cov / sigma2 - np.eye(d)
    value = float(np.sum(deviation ** 2) / n_clouds)
    # dL/dC_i is symmetric; the centering term drops out because centered
    # clouds have zero column means
    grad_cov = (2.0 / (n_clouds * sigma2)) * deviation
    grad = (2.0 / (m - 1)) * np.einsum("bmi,bij->bmj", centered, grad_cov)
    return value, grad


def whitening_value(embedded: np.ndarray, sigma: float) -> Tuple[float, int]:
    """Sum (not mean) of per-cloud whitening terms, with the cloud count."""
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    cov, _ = batched_covariance(embedded)
    deviation = cov / (sigma * sigma) - np.eye(embedded.shape[2])
    return float(np.sum(deviation ** 2)), embedded.shape[0]


def reconstruction_value_and_grad(reconstructed: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error over points and its gradient with respect to `reconstructed`."""
    if reconstructed.shape != target.shape:
        raise ShapeError(
            f"reconstruction shape {reconstructed.shape} does not match target {target.shape}"
        )
    n_points = reconstructed.shape[0]
    residual = reconstructed - target
    value = float(np.sum(residual ** 2) / n_points)
    return value, (2.0 / n_points) * residual
