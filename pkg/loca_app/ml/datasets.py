from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from core.exceptions import ConfigurationError, DegenerateCloudError, ShapeError


@dataclass(frozen=True, eq=False)
class BurstDataset:
    """
    N anchor observations, each with an M-point burst, in ambient units.

    anchors: N x D observed anchors y_i
    clouds:  N x M x D burst realizations y_i^(m)
    sigma:   burst scale in latent units (None when unknown)
    latents: optional N x d ground-truth latent anchors x_i
    """

    anchors: np.ndarray
    clouds: np.ndarray
    sigma: Optional[float] = None
    latents: Optional[np.ndarray] = None

    def __post_init__(self):
        anchors = np.asarray(self.anchors, dtype=np.float64)
        clouds = np.asarray(self.clouds, dtype=np.float64)
        if anchors.ndim != 2:
            raise ShapeError(f"anchors must be N x D, got shape {anchors.shape}")
        if clouds.ndim != 3:
            raise ShapeError(f"clouds must be N x M x D, got shape {clouds.shape}")
        if anchors.shape[0] < 1:
            raise ShapeError("dataset needs at least one anchor")
        if clouds.shape[0] != anchors.shape[0] or clouds.shape[2] != anchors.shape[1]:
            raise ShapeError(
                f"clouds {clouds.shape} do not match anchors {anchors.shape}"
            )
        if clouds.shape[1] < 2:
            raise DegenerateCloudError(f"bursts have {clouds.shape[1]} point(s), need at least 2")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "clouds", clouds)
        if self.sigma is not None:
            object.__setattr__(self, "sigma", float(self.sigma))
        if self.latents is not None:
            latents = np.asarray(self.latents, dtype=np.float64)
            if latents.ndim != 2 or latents.shape[0] != anchors.shape[0]:
                raise ShapeError(
                    f"latents {latents.shape} do not match {anchors.shape[0]} anchors"
                )
            object.__setattr__(self, "latents", latents)

    @property
    def n_clouds(self) -> int:
        return self.clouds.shape[0]

    @property
    def cloud_size(self) -> int:
        return self.clouds.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.clouds.shape[2]

    @property
    def latent_dim(self) -> int:
        return 0 if self.latents is None else self.latents.shape[1]

    def points(self) -> np.ndarray:
        """All cloud points stacked as (N*M) x D."""
        return self.clouds.reshape(-1, self.ambient_dim)

    def subset(self, indices: Sequence[int]) -> "BurstDataset":
        indices = np.asarray(indices, dtype=int)
        return BurstDataset(
            anchors=self.anchors[indices],
            clouds=self.clouds[indices],
            sigma=self.sigma,
            latents=None if self.latents is None else self.latents[indices],
        )

    def with_sigma(self, sigma: Optional[float]) -> "BurstDataset":
        return BurstDataset(self.anchors, self.clouds, sigma, self.latents)
