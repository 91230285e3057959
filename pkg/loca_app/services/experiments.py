"""
End-to-end reproduction pipelines: generate -> train -> baselines ->
evaluate -> write a results bundle.
"""

from contextlib import contextmanager
from typing import Any, Callable, Dict, Iterator, List, Optional

import numpy as np
import pandas as pd

from core.constants import BaselineKind, ExperimentName, MapKind
from core.exceptions import ExperimentStageError, LocaError, UsageError
from core.logging import get_logger
from ml.datasets import BurstDataset
from ml.evaluation import (
    export_distance_scatter,
    lemma1_check,
    optimal_scale,
    position_error,
    procrustes_calibrate,
    stress,
)
from ml.loca import TrainedLoca, decode, encode, estimate_embedding_dim, train_loca
from ml.manifolds import (
    FloorPlan,
    Region2D,
    f1_transform,
    frame_interpolation_pairs,
    grid_points,
    interpolate_segment,
    sample_plane_bursts,
    sphere_bursts,
    wifi_simulate,
)
from ml.serialization import coords_frame, save_dataset, save_trained, spectral_summary
from ml.spectral import SpectralEmbedding, adm_embed, dm_embed
from schemas.config import TrainConfig
from schemas.experiment import ExperimentSpec
from services.bundle import RunBundle

logger = get_logger(__name__)

RESULTS_FILE = "results.json"

# test grid for the out-of-sample experiment, in latent units
OOS_GRID_LO = (-0.025, -0.025)
OOS_GRID_HI = (1.025, 1.025)

LEMMA1_F1_POINT = (0.5, 0.5)
LEMMA1_SPHERE_POINT = (0.0, 0.0, -1.0)


def load_floor_plan(spec: ExperimentSpec) -> FloorPlan:
    if spec.floor_plan is not None:
        return FloorPlan.from_yaml(spec.floor_plan)
    return FloorPlan.default(n_transmitters=spec.n_transmitters, seed=spec.seed)


def generate_dataset(spec: ExperimentSpec) -> BurstDataset:
    """Training dataset of an experiment."""
    name = spec.name
    if name is ExperimentName.DIM_SWEEP:
        name = spec.sweep_source
    if name is ExperimentName.MUSHROOM:
        return sample_plane_bursts(Region2D.unit_square(), spec.n, spec.m, spec.sigma, spec.seed)
    if name in (ExperimentName.FRAME_OOS, ExperimentName.FRAME_INTERP):
        return sample_plane_bursts(Region2D.frame(), spec.n, spec.m, spec.sigma, spec.seed)
    if name is ExperimentName.SPHERE:
        return sphere_bursts(spec.alpha_range, spec.n_lattice, spec.m, spec.sigma, spec.seed)
    if name is ExperimentName.WIFI:
        return wifi_simulate(
            load_floor_plan(spec), spec.n, spec.m, spec.receiver_radius, spec.eps, spec.seed
        )
    raise UsageError(f"experiment {spec.name.value} has no dataset to generate")


def training_config(spec: ExperimentSpec, dataset: BurstDataset) -> TrainConfig:
    config = spec.train.with_embedding_dim(spec.embedding_dim).with_output_dim(dataset.ambient_dim)
    if spec.name is ExperimentName.WIFI and config.sigma is None:
        config = config.model_copy(update={"sigma": dataset.sigma / spec.latent_unit})
    return config


def stress_summary(embedding: np.ndarray, latents: np.ndarray, scaled: bool, seed: int) -> Dict[str, float]:
    """Stress at unit scale, or at the optimal global scale when `scaled`."""
    scale = optimal_scale(embedding, latents, seed=seed) if scaled else 1.0
    report = stress(embedding, latents, scale=scale, seed=seed)
    return report.to_dict()


class ExperimentRunner:
    """Runs one ExperimentSpec into its output directory."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.results: Dict[str, Any] = {}
        self.bundle: Optional[RunBundle] = None
        self._pipelines: Dict[ExperimentName, Callable[[], None]] = {
            ExperimentName.MUSHROOM: self._run_mushroom,
            ExperimentName.FRAME_OOS: self._run_frame_oos,
            ExperimentName.FRAME_INTERP: self._run_frame_interp,
            ExperimentName.SPHERE: self._run_sphere,
            ExperimentName.WIFI: self._run_wifi,
            ExperimentName.DIM_SWEEP: self._run_dim_sweep,
            ExperimentName.LEMMA1: self._run_lemma1,
        }

    def run(self) -> Dict[str, Any]:
        spec = self.spec
        arguments = spec.model_dump(mode="json", exclude={"output_dir"})
        with RunBundle(spec.output_dir, f"experiment {spec.name.value}", spec.seed, arguments) as bundle:
            self.bundle = bundle
            logger.info(f"Running experiment {spec.name.value} into {spec.output_dir}")
            try:
                self._pipelines[spec.name]()
            except ExperimentStageError as exc:
                bundle.mark_failed(exc.stage)
                bundle.write_json(
                    RESULTS_FILE,
                    {"experiment": spec.name, "status": "failed", "failed_stage": exc.stage, "error": exc.detail},
                )
                raise
            bundle.write_json(
                RESULTS_FILE,
                {"experiment": spec.name, "seed": spec.seed, "status": "ok", "results": self.results},
            )
        return self.results

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        logger.info(f"[{self.spec.name.value}] {name}")
        try:
            yield
        except ExperimentStageError:
            raise
        except LocaError as exc:
            logger.error(f"Stage {name!r} failed: {exc.detail}")
            raise ExperimentStageError(name, f"stage {name!r} failed: {exc.detail}", exc.exit_code) from exc
        except Exception as exc:
            logger.error(f"Stage {name!r} failed: {exc}", exc_info=True)
            raise ExperimentStageError(name, f"stage {name!r} failed: {exc}") from exc

    # ------------------------------------------------------------------
    # shared stages
    # ------------------------------------------------------------------

    def _generate(self) -> BurstDataset:
        with self.stage("generate"):
            dataset = generate_dataset(self.spec)
            self.bundle.register(save_dataset(dataset, self.bundle.path("dataset.npz")))
        return dataset

    def _train(self, dataset: BurstDataset, config: Optional[TrainConfig] = None) -> TrainedLoca:
        with self.stage("train"):
            trained = train_loca(dataset, config or training_config(self.spec, dataset))
            for path in save_trained(trained, self.bundle.path("model")).values():
                self.bundle.register(path)
        return trained

    def _evaluate_loca(self, trained: TrainedLoca, dataset: BurstDataset, latents: np.ndarray, key: str = "loca"):
        with self.stage("evaluate"):
            embedding = encode(trained, dataset.anchors)
            summary = stress_summary(embedding, latents, scaled=False, seed=self.spec.seed)
            summary["scaled"] = stress_summary(embedding, latents, scaled=True, seed=self.spec.seed)
            summary["final_validation"] = {k.value: v for k, v in trained.final_validation().items()}
            self.results[key] = summary
            self.bundle.write_frame(f"{key}_embedding.csv", coords_frame(embedding))
            self.bundle.write_frame(
                f"{key}_scatter.csv",
                export_distance_scatter(embedding, latents, 1.0, self.spec.scatter_pairs, self.spec.seed),
            )
        return embedding

    def _baseline_embedding(self, kind: BaselineKind, dataset: BurstDataset) -> SpectralEmbedding:
        spec = self.spec
        if kind is BaselineKind.DM:
            return dm_embed(dataset.anchors, spec.embedding_dim, spec.diffusion_time)
        return adm_embed(dataset, spec.embedding_dim, spec.diffusion_time, rank=spec.baseline_rank)

    def _run_baselines(self, dataset: BurstDataset, latents: np.ndarray) -> Dict[BaselineKind, SpectralEmbedding]:
        embeddings = {}
        for kind in self.spec.baselines:
            with self.stage(f"baseline_{kind.value}"):
                embedding = self._baseline_embedding(kind, dataset)
                summary = stress_summary(embedding.coords, latents, scaled=True, seed=self.spec.seed)
                summary.update(spectral_summary(embedding))
                self.results[kind.value] = summary
                self.bundle.write_frame(f"{kind.value}_embedding.csv", coords_frame(embedding.coords))
                self.bundle.write_frame(
                    f"{kind.value}_scatter.csv",
                    export_distance_scatter(
                        embedding.coords, latents, summary["scale_applied"], self.spec.scatter_pairs, self.spec.seed
                    ),
                )
                embeddings[kind] = embedding
        return embeddings

    # ------------------------------------------------------------------
    # pipelines
    # ------------------------------------------------------------------

    def _run_mushroom(self) -> None:
        dataset = self._generate()
        trained = self._train(dataset)
        self._evaluate_loca(trained, dataset, dataset.latents)
        self._run_baselines(dataset, dataset.latents)

    def _run_frame_oos(self) -> None:
        dataset = self._generate()
        trained = self._train(dataset)
        self._evaluate_loca(trained, dataset, dataset.latents)
        with self.stage("evaluate_regions"):
            grid = grid_points(OOS_GRID_LO, OOS_GRID_HI, self.spec.n_test)
            embedding = encode(trained, f1_transform(grid))
            interpolation = np.all((grid > 0.1) & (grid < 0.9), axis=1)
            inside = Region2D.unit_square().contains(grid)
            regions = {
                "interpolation": interpolation,
                "frame": inside & ~interpolation,
                "extrapolation": ~inside,
            }
            report = {}
            for region, mask in regions.items():
                if mask.sum() < 2:
                    logger.warning(f"Region {region} has fewer than two grid points; skipped")
                    continue
                report[region] = stress(embedding[mask], grid[mask], seed=self.spec.seed).to_dict()
                report[region]["n_points"] = int(mask.sum())
            self.results["regions"] = report

            alignment = procrustes_calibrate(encode(trained, dataset.anchors), dataset.latents)
            calibrated = alignment.apply(embedding)
            frame = pd.DataFrame(
                {
                    "x": grid[:, 0],
                    "y": grid[:, 1],
                    "region": np.select(
                        [regions["interpolation"], regions["frame"]], ["interpolation", "frame"], "extrapolation"
                    ),
                    "calibrated_x": calibrated[:, 0],
                    "calibrated_y": calibrated[:, 1],
                }
            )
            self.bundle.write_frame("oos_grid.csv", frame)
            self.results["calibration"] = alignment.to_dict()

    def _run_frame_interp(self) -> None:
        dataset = self._generate()
        trained = self._train(dataset)
        self._evaluate_loca(trained, dataset, dataset.latents)
        with self.stage("interpolate"):
            pairs = frame_interpolation_pairs(self.spec.n_boundary, self.spec.n_steps)
            start_codes = encode(trained, f1_transform(pairs.starts))
            end_codes = encode(trained, f1_transform(pairs.ends))
            decoded = np.stack(
                [
                    decode(trained, interpolate_segment(a, b, self.spec.n_steps))
                    for a, b in zip(start_codes, end_codes)
                ]
            )
            per_pair = np.mean(np.sum((decoded - pairs.observed) ** 2, axis=-1), axis=1)
            self.results["interpolation"] = {
                "n_pairs": pairs.n_pairs,
                "n_steps": self.spec.n_steps,
                "mse_mean": float(per_pair.mean()),
                "mse_std": float(per_pair.std()),
            }
            flat_latent = pairs.latents.reshape(-1, 2)
            flat_observed = pairs.observed.reshape(-1, 2)
            flat_decoded = decoded.reshape(-1, 2)
            self.bundle.write_frame(
                "interpolants.csv",
                pd.DataFrame(
                    {
                        "pair": np.repeat(np.arange(pairs.n_pairs), self.spec.n_steps),
                        "latent_x": flat_latent[:, 0],
                        "latent_y": flat_latent[:, 1],
                        "observed_u": flat_observed[:, 0],
                        "observed_v": flat_observed[:, 1],
                        "decoded_u": flat_decoded[:, 0],
                        "decoded_v": flat_decoded[:, 1],
                    }
                ),
            )

    def _run_sphere(self) -> None:
        dataset = self._generate()
        trained = self._train(dataset)
        self._evaluate_loca(trained, dataset, dataset.latents)
        self._run_baselines(dataset, dataset.latents)
        with self.stage("evaluate_test_cap"):
            spec = self.spec
            test = sphere_bursts(
                (spec.alpha_range[1], np.pi), spec.n_lattice, spec.m, spec.sigma, spec.seed + 1, closed="right"
            )
            embedding = encode(trained, test.anchors)
            self.results["test"] = stress(embedding, test.latents, seed=spec.seed).to_dict()
            self.results["test"]["n_points"] = test.n_clouds
            self.results["n_train_clouds"] = dataset.n_clouds - len(trained.validation_indices)
            self.results["n_validation_clouds"] = len(trained.validation_indices)

    def _run_wifi(self) -> None:
        spec = self.spec
        dataset = self._generate()
        trained = self._train(dataset)
        latents = dataset.latents / spec.latent_unit
        self._evaluate_loca(trained, dataset, latents)
        plan = load_floor_plan(spec)
        with self.stage("calibrate"):
            embedding = encode(trained, dataset.anchors)
            report = {"diagonal": plan.diagonal}
            methods = {"loca": embedding}
            if BaselineKind.DM in spec.baselines:
                methods["dm"] = dm_embed(dataset.anchors, spec.embedding_dim, spec.diffusion_time).coords
            for method, coords in methods.items():
                alignment = procrustes_calibrate(coords, dataset.latents, with_scale=True)
                error = position_error(alignment.apply(coords), dataset.latents)
                report[method] = {
                    "position_error": error,
                    "relative_position_error": error / plan.diagonal,
                    "calibration": alignment.to_dict(),
                }
                self.bundle.write_frame(
                    f"{method}_positions.csv",
                    pd.DataFrame(
                        np.column_stack([dataset.latents, alignment.apply(coords)]),
                        columns=["x", "y", "estimated_x", "estimated_y"],
                    ),
                )
            self.results["localization"] = report

    def _run_dim_sweep(self) -> None:
        dataset = self._generate()
        with self.stage("dim_sweep"):
            config = self.spec.train.with_output_dim(dataset.ambient_dim)
            estimate = estimate_embedding_dim(dataset, self.spec.d_max, config, rule=self.spec.dim_rule)
            self.results["dim_sweep"] = {
                "rule": estimate.rule.value,
                "selected_dim": estimate.selected_dim,
                "raw_loss_dim": estimate.raw_loss_dim,
                "rank_score_dim": estimate.rank_score_dim,
                "burst_rank": estimate.burst_rank,
                "failed_dims": list(estimate.failed_dims),
            }
            dims = sorted(estimate.scores)
            self.bundle.write_frame(
                "dim_sweep.csv",
                pd.DataFrame(
                    {
                        "dim": dims,
                        "whitening_loss": [estimate.whitening_losses[d] for d in dims],
                        "score": [estimate.scores[d] for d in dims],
                    }
                ),
            )

    def _run_lemma1(self) -> None:
        spec = self.spec
        rows: List[Dict[str, Any]] = []
        with self.stage("lemma1"):
            rng = np.random.default_rng(spec.seed)
            matrix = rng.normal(size=(2, 2))
            for m_samples in spec.lemma1_samples:
                error = lemma1_check(MapKind.LINEAR, np.zeros(2), spec.lemma1_sigmas[0], m_samples, spec.seed, matrix)
                rows.append(dict(map="linear", sigma=spec.lemma1_sigmas[0], m_samples=m_samples,
                                 control_variate=False, relative_error=error))
            m_max = max(spec.lemma1_samples)
            for sigma in spec.lemma1_sigmas:
                for map_kind, x0 in ((MapKind.F1, LEMMA1_F1_POINT), (MapKind.STEREOGRAPHIC, LEMMA1_SPHERE_POINT)):
                    error = lemma1_check(map_kind, np.asarray(x0), sigma, m_max, spec.seed, control_variate=True)
                    rows.append(dict(map=map_kind.value, sigma=sigma, m_samples=m_max,
                                     control_variate=True, relative_error=error))
            table = pd.DataFrame(rows, columns=["map", "sigma", "m_samples", "control_variate", "relative_error"])
            self.bundle.write_frame("lemma1.csv", table)

            linear = table[table["map"] == MapKind.LINEAR.value]
            summary: Dict[str, Any] = {"linear_errors": dict(zip(linear["m_samples"], linear["relative_error"]))}
            if len(linear) >= 2:
                slope = np.polyfit(np.log(linear["m_samples"]), np.log(linear["relative_error"]), 1)[0]
                summary["linear_log_slope"] = float(slope)
            if len(spec.lemma1_sigmas) >= 2:
                f1_rows = table[table["map"] == MapKind.F1.value]["relative_error"].to_numpy()
                summary["f1_sigma_ratio"] = float(f1_rows[0] / f1_rows[1])
            self.results["lemma1"] = summary
