"""
Quantitative evaluation of embeddings against known latents.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import orthogonal_procrustes
from scipy.spatial.distance import pdist

from core.config import settings
from core.constants import MapKind
from core.exceptions import (
    CalibrationError,
    ConfigurationError,
    DegenerateEmbeddingError,
    ShapeError,
)
from core.logging import get_logger
from ml.losses import empirical_covariance
from ml.manifolds import f1_jacobian, f1_transform, stereographic_jacobian, stereographic_project

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class Alignment:
    """x -> scale * x @ rotation + shift; rotation may include a reflection."""

    rotation: np.ndarray
    shift: np.ndarray
    scale: float = 1.0
    residual: float = 0.0

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) @ self.rotation + self.shift

    def to_dict(self) -> Dict[str, object]:
        return {
            "rotation": self.rotation.tolist(),
            "shift": self.shift.tolist(),
            "scale": self.scale,
            "residual": self.residual,
        }


@dataclass(frozen=True)
class StressReport:
    stress: float
    rms_distance_error: float
    n_pairs_used: int
    scale_applied: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "stress": self.stress,
            "rms_distance_error": self.rms_distance_error,
            "n_pairs_used": self.n_pairs_used,
            "scale_applied": self.scale_applied,
        }


def _check_pair(embedding: np.ndarray, latents: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    embedding = np.asarray(embedding, dtype=np.float64)
    latents = np.asarray(latents, dtype=np.float64)
    if embedding.ndim == 1:
        embedding = embedding[:, None]
    if latents.ndim == 1:
        latents = latents[:, None]
    if embedding.shape[0] != latents.shape[0]:
        raise ShapeError(f"embedding has {embedding.shape[0]} rows but latents have {latents.shape[0]}")
    if embedding.shape[0] < 2:
        raise ShapeError("pairwise evaluation needs at least two points")
    return embedding, latents


def _sampled_pairs(n: int, n_samples: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    return rng.integers(0, n, size=n_samples), rng.integers(0, n, size=n_samples)


def _pair_distances(
    embedding: np.ndarray,
    latents: np.ndarray,
    pair_subsample: Optional[int],
    seed: int,
) -> Tuple[np.ndarray, np.ndarray, bool]:
    """(latent distances, embedded distances, sampled); unordered pairs when not sampled."""
    n = embedding.shape[0]
    if pair_subsample is None and n <= settings.STRESS_FULL_PAIR_LIMIT:
        return pdist(latents), pdist(embedding), False
    n_samples = max(pair_subsample or settings.STRESS_PAIR_SAMPLES, 1)
    i, j = _sampled_pairs(n, n_samples, seed)
    dx = np.linalg.norm(latents[i] - latents[j], axis=1)
    dg = np.linalg.norm(embedding[i] - embedding[j], axis=1)
    return dx, dg, True


def stress(
    embedding: np.ndarray,
    latents: np.ndarray,
    scale: float = 1.0,
    pair_subsample: Optional[int] = None,
    seed: int = 0,
) -> StressReport:
    """
    (1/N) sum over ordered pairs of (D_x - scale * D_g)^2.

    Above STRESS_FULL_PAIR_LIMIT points (or when `pair_subsample` is given)
    ordered pairs are drawn with replacement and the mean is rescaled to
    the full N^2-pair sum.
    """
    if not scale > 0:
        raise ConfigurationError(f"scale must be positive, got {scale}")
    embedding, latents = _check_pair(embedding, latents)
    n = embedding.shape[0]
    dx, dg, sampled = _pair_distances(embedding, latents, pair_subsample, seed)
    sq = (dx - scale * dg) ** 2
    if sampled:
        mean_sq = float(np.mean(sq))
        return StressReport(
            stress=mean_sq * n,
            rms_distance_error=float(np.sqrt(mean_sq)),
            n_pairs_used=int(sq.size),
            scale_applied=float(scale),
        )
    # unordered sum counts each ordered pair once; i == j terms are zero
    ordered_sum = 2.0 * float(np.sum(sq))
    return StressReport(
        stress=ordered_sum / n,
        rms_distance_error=float(np.sqrt(ordered_sum / (n * n))),
        n_pairs_used=n * n,
        scale_applied=float(scale),
    )


def optimal_scale(
    embedding: np.ndarray,
    latents: np.ndarray,
    pair_subsample: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Closed-form stress minimiser s* = sum(D_x D_g) / sum(D_g^2)."""
    embedding, latents = _check_pair(embedding, latents)
    dx, dg, _ = _pair_distances(embedding, latents, pair_subsample, seed)
    denom = float(np.sum(dg ** 2))
    if not denom > 0:
        raise DegenerateEmbeddingError("all embedded distances are zero")
    return float(np.sum(dx * dg) / denom)


def procrustes_calibrate(
    embedding: np.ndarray,
    reference: np.ndarray,
    with_scale: bool = False,
    anchor_subset: Optional[Sequence[int]] = None,
) -> Alignment:
    """Least-squares orthogonal map (reflections allowed), shift and optional uniform scale."""
    embedding = np.asarray(embedding, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if embedding.shape != reference.shape or embedding.ndim != 2:
        raise ShapeError(f"embedding {embedding.shape} and reference {reference.shape} must match")
    if anchor_subset is not None:
        idx = np.asarray(anchor_subset, dtype=int)
        embedding, reference = embedding[idx], reference[idx]
    n, d = embedding.shape
    if n < d + 1:
        raise CalibrationError(f"calibration in {d} dimensions needs at least {d + 1} points, got {n}")

    mean_e = embedding.mean(axis=0)
    mean_r = reference.mean(axis=0)
    centered_e = embedding - mean_e
    centered_r = reference - mean_r
    if np.linalg.matrix_rank(centered_e) < d:
        raise CalibrationError("calibration points are not in general position")

    rotation, singular_sum = orthogonal_procrustes(centered_e, centered_r)
    scale = float(singular_sum / np.sum(centered_e ** 2)) if with_scale else 1.0
    shift = mean_r - scale * mean_e @ rotation
    fitted = scale * embedding @ rotation + shift
    residual = float(np.sqrt(np.mean(np.sum((fitted - reference) ** 2, axis=1))))
    return Alignment(rotation=rotation, shift=shift, scale=scale, residual=residual)


def position_error(aligned: np.ndarray, latents: np.ndarray) -> float:
    """Mean Euclidean distance between aligned embedding rows and their latents."""
    aligned, latents = np.asarray(aligned, dtype=np.float64), np.asarray(latents, dtype=np.float64)
    if aligned.shape != latents.shape:
        raise ShapeError(f"aligned {aligned.shape} and latents {latents.shape} must match")
    return float(np.mean(np.linalg.norm(aligned - latents, axis=1)))


def _map_and_jacobian(
    map_kind: MapKind,
    x0: np.ndarray,
    matrix: Optional[np.ndarray],
) -> Tuple[Callable[[np.ndarray], np.ndarray], np.ndarray]:
    if map_kind is MapKind.LINEAR:
        if matrix is None:
            raise ConfigurationError("a linear map needs its matrix")
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != x0.size:
            raise ShapeError(f"matrix {matrix.shape} cannot act on a point of size {x0.size}")
        return (lambda x: x @ matrix.T), matrix
    if map_kind is MapKind.F1:
        if x0.size != 2:
            raise ShapeError(f"f1 acts on 2-vectors, got size {x0.size}")
        return f1_transform, f1_jacobian(x0)
    if x0.size != 3:
        raise ShapeError(f"stereographic projection acts on 3-vectors, got size {x0.size}")
    return stereographic_project, stereographic_jacobian(x0)


def lemma1_check(
    map_kind: MapKind,
    x0: np.ndarray,
    sigma: float,
    m_samples: int,
    seed: int = 0,
    matrix: Optional[np.ndarray] = None,
    control_variate: bool = False,
) -> float:
    """
    Relative error ||C / sigma^2 - J J^T||_F / ||J J^T||_F for the
    covariance C of g(x0 + N(0, sigma^2 I)).

    With `control_variate` the Monte Carlo covariance is compared with that
    of the linearised push-forward J z of the same draws instead, leaving
    only the higher-order remainder.
    """
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    if m_samples < 2:
        raise ConfigurationError(f"need at least two samples, got {m_samples}")
    map_kind = MapKind(map_kind)
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    g, jacobian = _map_and_jacobian(map_kind, x0, matrix)
    target = jacobian @ jacobian.T

    rng = np.random.default_rng(seed)
    z = sigma * rng.standard_normal((m_samples, x0.size))
    observed = empirical_covariance(g(x0 + z)) / sigma ** 2
    if control_variate:
        reference = empirical_covariance(z @ jacobian.T) / sigma ** 2
    else:
        reference = target
    return float(np.linalg.norm(observed - reference) / np.linalg.norm(target))


def export_distance_scatter(
    embedding: np.ndarray,
    latents: np.ndarray,
    scale: float = 1.0,
    n_pairs: int = 10_000,
    seed: int = 0,
) -> pd.DataFrame:
    """Seeded sample of distinct pairs: latent distance against scaled embedded distance."""
    columns = ["latent_dist", "embedded_dist"]
    if n_pairs <= 0:
        return pd.DataFrame(columns=columns, dtype=float)
    embedding, latents = _check_pair(embedding, latents)
    n = embedding.shape[0]
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=n_pairs)
    j = (i + rng.integers(1, n, size=n_pairs)) % n
    return pd.DataFrame(
        {
            "latent_dist": np.linalg.norm(latents[i] - latents[j], axis=1),
            "embedded_dist": scale * np.linalg.norm(embedding[i] - embedding[j], axis=1),
        },
        columns=columns,
    )
