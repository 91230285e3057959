import copy
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.constants import Activation, BaselineKind, DimensionRule, ExperimentName
from core.exceptions import UsageError
from schemas.config import TrainConfig, format_validation_error, load_yaml_mapping

_PLANE = {"n": 2000, "m": 200, "sigma": 0.01, "embedding_dim": 2}

# Per-experiment defaults; user values are merged over these (the `train`
# block key by key).
EXPERIMENT_DEFAULTS: Dict[ExperimentName, Dict[str, Any]] = {
    ExperimentName.MUSHROOM: dict(_PLANE),
    ExperimentName.FRAME_OOS: dict(_PLANE, n_test=20_000),
    ExperimentName.FRAME_INTERP: dict(_PLANE, n_boundary=400, n_steps=10, baselines=[]),
    ExperimentName.SPHERE: {
        "n_lattice": 800,
        "m": 400,
        "sigma": 0.01,
        "embedding_dim": 3,
        "baseline_rank": 2,
        "train": {
            "encoder_layers": [100, 100, 3, 3],
            "decoder_layers": [100, 100, 2, 2],
            "encoder_activation": Activation.TANH.value,
            "decoder_activation": Activation.LEAKY_RELU.value,
            "batch_clouds": 50,
        },
    },
    ExperimentName.WIFI: {
        "n": 4000,
        "m": 6,
        "embedding_dim": 2,
        "n_transmitters": 17,
        "receiver_radius": 0.5,
        "eps": 600.0,
        "latent_unit": 1000.0,
        "baselines": [BaselineKind.DM.value],
        "train": {
            "encoder_layers": [200, 200, 2, 2],
            "decoder_layers": [200, 200, 17, 17],
            "encoder_activation": Activation.TANH.value,
            "decoder_activation": Activation.LEAKY_RELU.value,
            "batch_clouds": 200,
        },
    },
    ExperimentName.DIM_SWEEP: dict(_PLANE, d_max=4, sweep_source=ExperimentName.MUSHROOM.value, baselines=[]),
    ExperimentName.LEMMA1: {"baselines": []},
}


def _sweep_defaults(source: Any) -> Dict[str, Any]:
    """A dimension sweep generates and trains like its source experiment."""
    merged = copy.deepcopy(EXPERIMENT_DEFAULTS[ExperimentName.DIM_SWEEP])
    try:
        source = ExperimentName(source)
    except (TypeError, ValueError):
        return merged
    if source in (ExperimentName.MUSHROOM, ExperimentName.SPHERE):
        base = copy.deepcopy(EXPERIMENT_DEFAULTS[source])
        base.pop("baseline_rank", None)
        base.update({k: v for k, v in merged.items() if k not in _PLANE})
        base["sweep_source"] = source.value
        merged = base
    return merged


class ExperimentSpec(BaseModel):
    """One end-to-end reproduction run; unset fields take the experiment's defaults."""

    name: ExperimentName
    seed: int = Field(default=0, ge=0)
    output_dir: Path = Path("results")

    # generator arguments
    n: int = Field(default=2000, ge=1, description="Anchor count")
    m: int = Field(default=200, ge=2, description="Points per burst")
    sigma: Optional[float] = Field(default=0.01, gt=0, description="Burst scale in latent units")
    n_lattice: int = Field(default=800, ge=1)
    alpha_range: Tuple[float, float] = (np.pi / 3, 5 * np.pi / 6)
    n_test: int = Field(default=20_000, ge=4, description="Out-of-sample grid size")
    n_boundary: int = Field(default=400, ge=4)
    n_steps: int = Field(default=10, ge=1)
    n_transmitters: int = Field(default=17, ge=1)
    receiver_radius: float = Field(default=0.5, gt=0)
    eps: float = Field(default=600.0, gt=0)
    latent_unit: float = Field(default=1.0, gt=0, description="Latent length unit the embedding is trained in")
    floor_plan: Optional[Path] = None

    # embedding and evaluation
    embedding_dim: int = Field(default=2, ge=1)
    d_max: int = Field(default=4, ge=1)
    sweep_source: ExperimentName = ExperimentName.MUSHROOM
    dim_rule: DimensionRule = DimensionRule.RAW_LOSS
    baselines: List[BaselineKind] = Field(default_factory=lambda: [BaselineKind.DM, BaselineKind.ADM])
    baseline_rank: Optional[int] = Field(default=None, ge=1)
    diffusion_time: int = Field(default=1, ge=1)
    scatter_pairs: int = Field(default=10_000, ge=0)

    # lemma1 grid
    lemma1_sigmas: List[float] = Field(default_factory=lambda: [0.02, 0.01], min_length=1)
    lemma1_samples: List[int] = Field(default_factory=lambda: [1_000, 10_000, 100_000], min_length=1)

    train: TrainConfig = Field(default_factory=TrainConfig)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="before")
    @classmethod
    def apply_experiment_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "name" not in data:
            return data
        try:
            name = ExperimentName(data["name"])
        except ValueError:
            return data
        if name is ExperimentName.DIM_SWEEP:
            merged = _sweep_defaults(data.get("sweep_source", ExperimentName.MUSHROOM))
        else:
            merged = copy.deepcopy(EXPERIMENT_DEFAULTS.get(name, {}))
        train = dict(merged.pop("train", {}))
        user_train = data.get("train") or {}
        if isinstance(user_train, TrainConfig):
            user_train = user_train.model_dump(exclude_unset=True)
        train.update(user_train)
        merged.update({k: v for k, v in data.items() if k != "train"})
        merged["train"] = train
        return merged

    @model_validator(mode="after")
    def check_required(self) -> "ExperimentSpec":
        if self.sweep_source not in (ExperimentName.MUSHROOM, ExperimentName.SPHERE):
            raise ValueError("sweep_source must be mushroom or sphere")
        if self.n_boundary % 4:
            raise ValueError("n_boundary must be a multiple of 4")
        lo, hi = self.alpha_range
        if not 0 <= lo < hi <= np.pi:
            raise ValueError("alpha_range must satisfy 0 <= lo < hi <= pi")
        return self


def load_experiment_spec(
    name: Optional[str] = None,
    path: Optional[Union[str, Path]] = None,
    train_overrides: Optional[Dict[str, Any]] = None,
    **overrides: Any,
) -> ExperimentSpec:
    """Build a spec from an optional YAML file, then command-line overrides."""
    data: Dict[str, Any] = load_yaml_mapping(path) if path is not None else {}
    if name is not None:
        data["name"] = name
    data.update({k: v for k, v in overrides.items() if v is not None})
    train = dict(data.get("train") or {})
    train.update({k: v for k, v in (train_overrides or {}).items() if v is not None})
    if train:
        data["train"] = train
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as exc:
        raise UsageError(f"invalid experiment spec: {format_validation_error(exc)}")
