"""
Diffusion Maps and Anisotropic Diffusion Maps baselines.

Both build a Gaussian kernel with the max-min bandwidth, row-normalise it
into a Markov matrix P = D^-1 K and embed with the leading non-trivial
right eigenvectors of P, computed through the symmetric conjugate
D^-1/2 K D^-1/2.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import LinAlgError, eigh
from scipy.spatial.distance import pdist, squareform

from core.config import settings
from core.exceptions import ConfigurationError, DegenerateBandwidthError, DegenerateCloudError, NumericError
from core.logging import get_logger
from ml.datasets import BurstDataset
from ml.losses import empirical_covariance

logger = get_logger(__name__)

DEFAULT_PINV_REL_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class SpectralEmbedding:
    """
    eigenvalues:  d+1 eigenvalues of P, descending (the first is 1)
    eigenvectors: N x (d+1) right eigenvectors, the first constant
    coords:       N x d diffusion coordinates lambda_k^t psi_k, k = 1..d
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    coords: np.ndarray
    t: int
    epsilon: float

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


def maxmin_epsilon(data: np.ndarray, precomputed: bool = False) -> float:
    """
    Largest nearest-neighbour squared distance.

    `data` is N x D points, or an N x N squared-distance matrix when
    `precomputed` is set.
    """
    data = np.asarray(data, dtype=np.float64)
    sq_dists = data.copy() if precomputed else squareform(pdist(data, "sqeuclidean"))
    if sq_dists.shape[0] < 2:
        raise ConfigurationError("max-min bandwidth needs at least two points")
    np.fill_diagonal(sq_dists, np.inf)
    epsilon = float(np.max(np.min(sq_dists, axis=1)))
    if not epsilon > 0:
        raise DegenerateBandwidthError("every point has a duplicate; max-min bandwidth is zero")
    return epsilon


def gaussian_kernel(sq_dists: np.ndarray, epsilon: float) -> np.ndarray:
    """K_ij = exp(-d_ij^2 / (2 epsilon))."""
    return np.exp(-np.asarray(sq_dists, dtype=np.float64) / (2.0 * epsilon))


def transition_matrix(kernel: np.ndarray) -> np.ndarray:
    """Row-stochastic P = D^-1 K."""
    kernel = np.asarray(kernel, dtype=np.float64)
    return kernel / kernel.sum(axis=1, keepdims=True)


def spectral_embedding(kernel: np.ndarray, d: int, t: int = 1, epsilon: float = float("nan")) -> SpectralEmbedding:
    """Top d+1 right eigenpairs of the Markov matrix of `kernel`, trivial pair first."""
    n = kernel.shape[0]
    if d < 1 or n < d + 2:
        raise ConfigurationError(f"need 1 <= d and N >= d + 2, got d={d}, N={n}")
    degree = kernel.sum(axis=1)
    scale = 1.0 / np.sqrt(degree)
    conjugate = scale[:, None] * kernel * scale[None, :]
    conjugate = 0.5 * (conjugate + conjugate.T)
    try:
        values, vectors = eigh(conjugate, subset_by_index=[n - d - 1, n - 1])
    except (LinAlgError, ValueError) as exc:
        raise NumericError(f"eigendecomposition failed: {exc}", location="eigh")
    values, vectors = values[::-1], vectors[:, ::-1]

    # psi_k = phi_k / phi_0 maps eigenvectors of the conjugate back to P and
    # makes the trivial one identically 1
    psi = vectors / vectors[:, [0]]
    for k in range(1, d + 1):
        if psi[np.argmax(np.abs(psi[:, k])), k] < 0:
            psi[:, k] = -psi[:, k]
    coords = psi[:, 1:] * values[1:] ** t
    logger.debug(f"Spectral embedding: eigenvalues {np.round(values, 6).tolist()}")
    return SpectralEmbedding(eigenvalues=values, eigenvectors=psi, coords=coords, t=t, epsilon=epsilon)


def dm_embed(points: np.ndarray, d: int, t: int = 1) -> SpectralEmbedding:
    """Diffusion Maps on Euclidean distances."""
    sq_dists = squareform(pdist(np.asarray(points, dtype=np.float64), "sqeuclidean"))
    epsilon = maxmin_epsilon(sq_dists, precomputed=True)
    logger.info(f"DM on {sq_dists.shape[0]} points, epsilon={epsilon:.6g}")
    return spectral_embedding(gaussian_kernel(sq_dists, epsilon), d, t, epsilon)


def mahalanobis_sq(y_i: np.ndarray, y_j: np.ndarray, ci_pinv: np.ndarray, cj_pinv: np.ndarray) -> float:
    """1/2 (y_i - y_j)^T (C_i^+ + C_j^+) (y_i - y_j)."""
    diff = np.asarray(y_i, dtype=np.float64) - np.asarray(y_j, dtype=np.float64)
    return float(0.5 * diff @ (ci_pinv + cj_pinv) @ diff)


def burst_cov_pinv(
    cloud: np.ndarray,
    rank: Optional[int] = None,
    rel_tol: float = DEFAULT_PINV_REL_TOL,
) -> np.ndarray:
    """
    Generalised inverse of a burst covariance: the top `rank` eigenvalues
    are inverted when `rank` is given, otherwise those above rel_tol * max.
    """
    cov = empirical_covariance(cloud)
    values, vectors = np.linalg.eigh(cov)
    top = values[-1]
    if not top > 0:
        raise DegenerateCloudError("burst covariance is zero")
    if rank is not None:
        if not 1 <= rank <= values.size:
            raise ConfigurationError(f"rank must be between 1 and {values.size}, got {rank}")
        keep = np.arange(values.size - rank, values.size)
    else:
        keep = np.flatnonzero(values > rel_tol * top)
    basis = vectors[:, keep]
    pinv = (basis / values[keep]) @ basis.T
    return 0.5 * (pinv + pinv.T)


def _quadratic_block(anchors: np.ndarray, pinvs: np.ndarray, start: int, stop: int) -> np.ndarray:
    diff = anchors[start:stop, None, :] - anchors[None, :, :]
    return np.einsum("bnd,bde,bne->bn", diff, pinvs[start:stop], diff)


def mahalanobis_matrix(anchors: np.ndarray, pinvs: np.ndarray) -> np.ndarray:
    """Symmetric N x N matrix of mahalanobis_sq over all anchor pairs."""
    anchors = np.asarray(anchors, dtype=np.float64)
    pinvs = np.asarray(pinvs, dtype=np.float64)
    n = anchors.shape[0]
    block = max(settings.KERNEL_BLOCK_ROWS, 1)
    blocks = Parallel(n_jobs=settings.LOCA_THREADS, prefer="threads")(
        delayed(_quadratic_block)(anchors, pinvs, start, min(start + block, n))
        for start in range(0, n, block)
    )
    one_sided = np.vstack(blocks)
    return 0.5 * (one_sided + one_sided.T)


def adm_embed(
    dataset: BurstDataset,
    d: int,
    t: int = 1,
    rank: Optional[int] = None,
    rel_tol: float = DEFAULT_PINV_REL_TOL,
) -> SpectralEmbedding:
    """Diffusion Maps on the burst-covariance Mahalanobis metric."""
    pinvs = np.stack([burst_cov_pinv(cloud, rank, rel_tol) for cloud in dataset.clouds])
    sq_dists = mahalanobis_matrix(dataset.anchors, pinvs)
    epsilon = maxmin_epsilon(sq_dists, precomputed=True)
    logger.info(f"A-DM on {dataset.n_clouds} bursts, epsilon={epsilon:.6g}")
    return spectral_embedding(gaussian_kernel(sq_dists, epsilon), d, t, epsilon)
