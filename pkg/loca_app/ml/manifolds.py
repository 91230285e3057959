"""
Seeded generators for the synthetic burst datasets: the f1 "mushroom"
plane, framed regions, interpolation pairs, the stereographic sphere and
the Wi-Fi amplitude simulator.

Every generator draws from one `np.random.default_rng(seed)` stream in a
fixed order, so identical arguments give bit-identical datasets.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from matplotlib.path import Path as PolygonPath
from scipy.spatial.distance import cdist

from core.constants import MAX_REJECTION_ATTEMPTS, POLE_TOLERANCE, RegionKind
from core.exceptions import ConfigurationError, RegionError, SingularityError
from core.logging import get_logger
from ml.datasets import BurstDataset
from schemas.config import FloorPlanConfig, load_floor_plan_config

logger = get_logger(__name__)

Bounds = Tuple[Tuple[float, float], Tuple[float, float]]

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


# ----------------------------------------------------------------------------
# Planar regions and the f1 map
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Region2D:
    """Axis-aligned planar region; a frame is `outer` minus the open `inner` box."""

    kind: RegionKind
    outer: Bounds = ((0.0, 0.0), (1.0, 1.0))
    inner: Optional[Bounds] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RegionKind(self.kind))
        (x0, y0), (x1, y1) = self.outer
        if not (x0 < x1 and y0 < y1):
            raise ConfigurationError(f"region bounds {self.outer} need lo < hi componentwise")
        if self.kind is RegionKind.FRAME:
            if self.inner is None:
                raise ConfigurationError("a frame region needs inner bounds")
            (a0, b0), (a1, b1) = self.inner
            if not (x0 < a0 < a1 < x1 and y0 < b0 < b1 < y1):
                raise ConfigurationError(f"inner box {self.inner} must lie strictly inside {self.outer}")

    @classmethod
    def unit_square(cls) -> "Region2D":
        return cls(RegionKind.UNIT_SQUARE)

    @classmethod
    def rectangle(cls, lo: Tuple[float, float], hi: Tuple[float, float]) -> "Region2D":
        return cls(RegionKind.RECTANGLE, outer=(tuple(lo), tuple(hi)))

    @classmethod
    def frame(
        cls,
        outer: Bounds = ((0.0, 0.0), (1.0, 1.0)),
        inner: Bounds = ((0.1, 0.1), (0.9, 0.9)),
    ) -> "Region2D":
        return cls(RegionKind.FRAME, outer=outer, inner=inner)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        lo, hi = np.asarray(self.outer[0]), np.asarray(self.outer[1])
        mask = np.all((points >= lo) & (points <= hi), axis=1)
        if self.kind is RegionKind.FRAME:
            a, b = np.asarray(self.inner[0]), np.asarray(self.inner[1])
            mask &= ~np.all((points > a) & (points < b), axis=1)
        return mask

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = np.asarray(self.outer[0]), np.asarray(self.outer[1])
        if self.kind is not RegionKind.FRAME:
            return rng.uniform(lo, hi, size=(n, 2))
        return _rejection_sample(n, lo, hi, self.contains, rng)


def _rejection_sample(n: int, lo: np.ndarray, hi: np.ndarray, contains, rng: np.random.Generator) -> np.ndarray:
    accepted = []
    n_accepted = 0
    attempts = 0
    while n_accepted < n:
        if attempts >= MAX_REJECTION_ATTEMPTS:
            raise RegionError(
                f"rejection sampling accepted {n_accepted}/{n} points in {attempts} attempts"
            )
        size = min(max(2 * (n - n_accepted), 1024), MAX_REJECTION_ATTEMPTS - attempts)
        candidates = rng.uniform(lo, hi, size=(size, 2))
        attempts += size
        kept = candidates[contains(candidates)]
        accepted.append(kept)
        n_accepted += kept.shape[0]
    return np.concatenate(accepted)[:n]


def f1_transform(x: np.ndarray) -> np.ndarray:
    """(x0, x1) -> (x0 + x1^3, -x0 + x1^3), applied over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    cube = x[..., 1] ** 3
    return np.stack([x[..., 0] + cube, -x[..., 0] + cube], axis=-1)


def f1_inverse(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    u, v = y[..., 0], y[..., 1]
    return np.stack([(u - v) / 2.0, np.cbrt((u + v) / 2.0)], axis=-1)


def f1_jacobian(x: np.ndarray) -> np.ndarray:
    """Jacobian of f1, shape (..., 2, 2)."""
    x = np.asarray(x, dtype=np.float64)
    slope = 3.0 * x[..., 1] ** 2
    ones = np.ones_like(slope)
    return np.stack(
        [np.stack([ones, slope], axis=-1), np.stack([-ones, slope], axis=-1)],
        axis=-2,
    )


def sample_plane_bursts(region: Region2D, n: int, m: int, sigma: float, seed: int) -> BurstDataset:
    """Anchors uniform over `region`, Gaussian bursts of scale sigma, all pushed through f1."""
    if n < 1 or m < 1:
        raise ConfigurationError(f"need N >= 1 and M >= 1, got N={n}, M={m}")
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    rng = np.random.default_rng(seed)
    latents = region.sample(n, rng)
    noise = rng.normal(0.0, sigma, size=(n, m, 2))
    clouds = f1_transform(latents[:, None, :] + noise)
    logger.info(f"Generated {n} {region.kind.value} bursts of {m} points, sigma={sigma:g}")
    return BurstDataset(anchors=f1_transform(latents), clouds=clouds, sigma=sigma, latents=latents)


@dataclass(frozen=True, eq=False)
class InterpolationPairs:
    """Opposed points on the inner frame boundary and the interpolants between them."""

    starts: np.ndarray
    ends: np.ndarray
    latents: np.ndarray
    observed: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.starts.shape[0]


def interpolate_segment(start: np.ndarray, end: np.ndarray, n_steps: int) -> np.ndarray:
    """n_steps equispaced points strictly between start and end."""
    t = np.arange(1, n_steps + 1) / (n_steps + 1)
    start, end = np.asarray(start, dtype=np.float64), np.asarray(end, dtype=np.float64)
    return start + t[:, None] * (end - start)


def frame_interpolation_pairs(
    n_boundary: int,
    n_steps: int,
    inner: Bounds = ((0.1, 0.1), (0.9, 0.9)),
) -> InterpolationPairs:
    """
    n_boundary / 4 points per side of the inner boundary; left-right and
    bottom-top opposites are paired and interpolated across the hole.
    """
    if n_boundary <= 0 or n_boundary % 4:
        raise ConfigurationError(f"n_boundary must be a positive multiple of 4, got {n_boundary}")
    if n_steps < 1:
        raise ConfigurationError(f"n_steps must be positive, got {n_steps}")
    per_side = n_boundary // 4
    (x0, y0), (x1, y1) = inner
    s = (np.arange(per_side) + 0.5) / per_side
    ys = y0 + s * (y1 - y0)
    xs = x0 + s * (x1 - x0)

    horizontal_starts = np.column_stack([np.full(per_side, x0), ys])
    horizontal_ends = np.column_stack([np.full(per_side, x1), ys])
    vertical_starts = np.column_stack([xs, np.full(per_side, y0)])
    vertical_ends = np.column_stack([xs, np.full(per_side, y1)])
    starts = np.vstack([horizontal_starts, vertical_starts])
    ends = np.vstack([horizontal_ends, vertical_ends])

    latents = np.stack([interpolate_segment(a, b, n_steps) for a, b in zip(starts, ends)])
    return InterpolationPairs(starts=starts, ends=ends, latents=latents, observed=f1_transform(latents))


# ----------------------------------------------------------------------------
# Sphere
# ----------------------------------------------------------------------------

def fibonacci_sphere(n: int) -> np.ndarray:
    """Fibonacci lattice: z = 1 - 2(i + 0.5)/n, golden-angle longitude."""
    if n < 1:
        raise ConfigurationError(f"n must be at least 1, got {n}")
    i = np.arange(n)
    z = 1.0 - 2.0 * (i + 0.5) / n
    radius = np.sqrt(1.0 - z ** 2)
    phi = GOLDEN_ANGLE * i
    points = np.column_stack([radius * np.cos(phi), radius * np.sin(phi), z])
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def spherical_angles(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Polar angle alpha (from the north pole) and longitude beta of unit vectors."""
    points = np.asarray(points, dtype=np.float64)
    alpha = np.arccos(np.clip(points[:, 2], -1.0, 1.0))
    beta = np.arctan2(points[:, 1], points[:, 0])
    return alpha, beta


def _alpha_mask(alpha: np.ndarray, alpha_range: Tuple[float, float], closed: str) -> np.ndarray:
    lo, hi = alpha_range
    if closed not in ("both", "left", "right", "neither"):
        raise ConfigurationError(f"closed must be both, left, right or neither, got {closed!r}")
    lower = alpha >= lo if closed in ("both", "left") else alpha > lo
    upper = alpha <= hi if closed in ("both", "right") else alpha < hi
    return lower & upper


def _rotation_to(alpha: float, beta: float) -> np.ndarray:
    """Rz(beta) @ Ry(alpha - pi/2): maps (alpha, beta) = (pi/2, 0) onto (alpha, beta)."""
    theta = alpha - np.pi / 2.0
    ry = np.array(
        [[np.cos(theta), 0.0, np.sin(theta)], [0.0, 1.0, 0.0], [-np.sin(theta), 0.0, np.cos(theta)]]
    )
    rz = np.array(
        [[np.cos(beta), -np.sin(beta), 0.0], [np.sin(beta), np.cos(beta), 0.0], [0.0, 0.0, 1.0]]
    )
    return rz @ ry


def stereographic_project(x: np.ndarray) -> np.ndarray:
    """(x1, x2, x3) -> (x1, x2) / (1 - x3), applied over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    s = 1.0 - x[..., 2]
    if np.any(np.abs(s) < POLE_TOLERANCE):
        raise SingularityError("stereographic projection is singular at the north pole")
    return np.stack([x[..., 0] / s, x[..., 1] / s], axis=-1)


def stereographic_jacobian(x: np.ndarray) -> np.ndarray:
    """Jacobian of the projection, shape (..., 2, 3)."""
    x = np.asarray(x, dtype=np.float64)
    s = 1.0 - x[..., 2]
    if np.any(np.abs(s) < POLE_TOLERANCE):
        raise SingularityError("stereographic projection is singular at the north pole")
    zero = np.zeros_like(s)
    return np.stack(
        [
            np.stack([1.0 / s, zero, x[..., 0] / s ** 2], axis=-1),
            np.stack([zero, 1.0 / s, x[..., 1] / s ** 2], axis=-1),
        ],
        axis=-2,
    )


def inverse_stereographic(y: np.ndarray) -> np.ndarray:
    """Plane back to the unit sphere minus the north pole."""
    y = np.asarray(y, dtype=np.float64)
    r2 = np.sum(y ** 2, axis=-1)
    return np.stack([2.0 * y[..., 0], 2.0 * y[..., 1], r2 - 1.0], axis=-1) / (r2 + 1.0)[..., None]


def sphere_bursts(
    alpha_range: Tuple[float, float],
    n_lattice: int,
    m: int,
    sigma: float,
    seed: int,
    closed: str = "both",
) -> BurstDataset:
    """
    Anchors from the Fibonacci lattice with polar angle in `alpha_range`;
    each burst is a polar-coordinate Gaussian around (pi/2, 0) rotated onto
    its anchor and observed through the stereographic projection.
    """
    lo, hi = alpha_range
    if not 0.0 <= lo <= hi <= np.pi:
        raise ConfigurationError(f"alpha_range {alpha_range} must lie within [0, pi]")
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    lattice = fibonacci_sphere(n_lattice)
    alpha, beta = spherical_angles(lattice)
    mask = _alpha_mask(alpha, alpha_range, closed)
    if not np.any(mask):
        raise RegionError(f"no lattice point of {n_lattice} has polar angle in {alpha_range}")
    anchors, alpha, beta = lattice[mask], alpha[mask], beta[mask]
    if np.any(1.0 - anchors[:, 2] < POLE_TOLERANCE):
        raise SingularityError("an anchor lies at the north pole, where the projection is singular")

    rng = np.random.default_rng(seed)
    n = anchors.shape[0]
    polar = np.pi / 2.0 + sigma * rng.standard_normal((n, m))
    longitude = sigma * rng.standard_normal((n, m))
    equator_clouds = np.stack(
        [np.sin(polar) * np.cos(longitude), np.sin(polar) * np.sin(longitude), np.cos(polar)],
        axis=-1,
    )
    rotations = np.stack([_rotation_to(a, b) for a, b in zip(alpha, beta)])
    clouds = np.einsum("nij,nmj->nmi", rotations, equator_clouds)

    logger.info(f"Generated {n} sphere bursts of {m} points from a {n_lattice}-point lattice")
    return BurstDataset(
        anchors=stereographic_project(anchors),
        clouds=stereographic_project(clouds),
        sigma=sigma,
        latents=anchors,
    )


# ----------------------------------------------------------------------------
# Wi-Fi floor plan
# ----------------------------------------------------------------------------

DEFAULT_OUTLINE = ((0, 0), (600, 0), (600, 600), (350, 600), (350, 1000), (0, 1000))
DEFAULT_HOLES = (
    ((100, 150), (250, 150), (250, 300), (100, 300)),
    ((120, 700), (230, 700), (230, 850), (120, 850)),
)


@dataclass(frozen=True, eq=False)
class FloorPlan:
    """Polygon outline minus holes, in pixels, with L transmitter positions."""

    width: float
    height: float
    outline: Tuple[Tuple[float, float], ...]
    holes: Tuple[Tuple[Tuple[float, float], ...], ...]
    transmitters: np.ndarray

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ConfigurationError(f"floor plan size must be positive, got {self.width}x{self.height}")
        transmitters = np.asarray(self.transmitters, dtype=np.float64).reshape(-1, 2)
        inside = (
            (transmitters[:, 0] >= 0) & (transmitters[:, 0] <= self.width)
            & (transmitters[:, 1] >= 0) & (transmitters[:, 1] <= self.height)
        )
        if not np.all(inside):
            raise ConfigurationError("every transmitter must lie within the floor plan bounds")
        object.__setattr__(self, "transmitters", transmitters)
        if self.free_area() <= 0:
            raise RegionError("floor plan has no free space")

    @property
    def n_transmitters(self) -> int:
        return self.transmitters.shape[0]

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def free_area(self) -> float:
        def shoelace(poly) -> float:
            p = np.asarray(poly, dtype=np.float64)
            return 0.5 * abs(np.dot(p[:, 0], np.roll(p[:, 1], 1)) - np.dot(p[:, 1], np.roll(p[:, 0], 1)))

        return shoelace(self.outline) - sum(shoelace(hole) for hole in self.holes)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        mask = PolygonPath(np.asarray(self.outline, dtype=np.float64)).contains_points(points)
        for hole in self.holes:
            mask &= ~PolygonPath(np.asarray(hole, dtype=np.float64)).contains_points(points)
        return mask

    def sample_free(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return _rejection_sample(n, np.zeros(2), np.array([self.width, self.height]), self.contains, rng)

    @classmethod
    def from_config(cls, config: FloorPlanConfig) -> "FloorPlan":
        outline = tuple(tuple(map(float, v)) for v in config.outline)
        holes = tuple(tuple(tuple(map(float, v)) for v in hole) for hole in config.holes)
        if config.transmitters is not None:
            transmitters = np.asarray(config.transmitters, dtype=np.float64).reshape(-1, 2)
            return cls(config.width, config.height, outline, holes, transmitters)
        plan = cls(config.width, config.height, outline, holes, np.empty((0, 2)))
        rng = np.random.default_rng(config.seed)
        transmitters = plan.sample_free(config.n_transmitters, rng) if config.n_transmitters else np.empty((0, 2))
        return cls(config.width, config.height, outline, holes, transmitters)

    @classmethod
    def default(cls, n_transmitters: int = 17, seed: int = 0) -> "FloorPlan":
        """600 x 1000 L-shaped plan with two rectangular cutouts."""
        return cls.from_config(
            FloorPlanConfig(
                width=600,
                height=1000,
                outline=list(DEFAULT_OUTLINE),
                holes=[list(hole) for hole in DEFAULT_HOLES],
                n_transmitters=n_transmitters,
                seed=seed,
            )
        )

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> "FloorPlan":
        return cls.from_config(load_floor_plan_config(path))


def wifi_amplitudes(points: np.ndarray, transmitters: np.ndarray, eps: float) -> np.ndarray:
    """exp(-||x - t||^2 / eps^2) for every point (rows) and transmitter (columns)."""
    if not eps > 0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return np.exp(-cdist(points, np.asarray(transmitters, dtype=np.float64), "sqeuclidean") / eps ** 2)


def receiver_sigma(r: float, m: int) -> float:
    """Per-axis standard deviation (denominator M - 1) of M receivers evenly spaced on a circle of radius r."""
    return float(r * np.sqrt(m / (2.0 * (m - 1))))


def wifi_simulate(
    plan: FloorPlan,
    n: int,
    m: int = 6,
    r: float = 0.5,
    eps: float = 600.0,
    seed: int = 0,
) -> BurstDataset:
    """
    Anchors uniform over the plan's free space; each burst holds the
    amplitudes seen by M receivers at x + r (cos 2 pi k / M, sin 2 pi k / M).
    """
    if plan.n_transmitters == 0:
        raise ConfigurationError("floor plan has no transmitters")
    if not r > 0:
        raise ConfigurationError(f"receiver radius must be positive, got {r}")
    if n < 1 or m < 2:
        raise ConfigurationError(f"need N >= 1 and M >= 2, got N={n}, M={m}")
    rng = np.random.default_rng(seed)
    anchors = plan.sample_free(n, rng)
    angles = 2.0 * np.pi * np.arange(m) / m
    offsets = r * np.column_stack([np.cos(angles), np.sin(angles)])
    receivers = anchors[:, None, :] + offsets[None, :, :]
    clouds = wifi_amplitudes(receivers.reshape(-1, 2), plan.transmitters, eps).reshape(n, m, -1)
    logger.info(f"Simulated {n} Wi-Fi bursts of {m} receivers over {plan.n_transmitters} transmitters")
    return BurstDataset(
        anchors=wifi_amplitudes(anchors, plan.transmitters, eps),
        clouds=clouds,
        sigma=receiver_sigma(r, m),
        latents=anchors,
    )


def grid_points(lo: Sequence[float], hi: Sequence[float], n_total: int) -> np.ndarray:
    """Regular square grid of about n_total points over the box [lo, hi]."""
    per_axis = max(int(round(np.sqrt(n_total))), 2)
    xs = np.linspace(lo[0], hi[0], per_axis)
    ys = np.linspace(lo[1], hi[1], per_axis)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])
