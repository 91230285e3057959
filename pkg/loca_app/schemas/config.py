from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from core.constants import Activation
from core.exceptions import UsageError


class TrainConfig(BaseModel):
    """
    Training configuration for LOCA.

    Layer lists give the sizes after the input layer, e.g. [50, 50, 2, 2]
    for an encoder: the input width is the ambient dimension D and the last
    entry is the embedding dimension. The decoder's input width is the
    embedding dimension and its last entry must equal D.
    """

    encoder_layers: List[int] = Field(default_factory=lambda: [50, 50, 2, 2], min_length=1)
    decoder_layers: List[int] = Field(default_factory=lambda: [50, 50, 2, 2], min_length=1)
    encoder_activation: Activation = Activation.TANH
    decoder_activation: Activation = Activation.TANH
    linear_tail: int = Field(default=2, ge=0, description="Trailing layers without activation")

    batch_clouds: int = Field(default=200, gt=0, description="Clouds per minibatch")
    lr_schedule: List[float] = Field(default_factory=lambda: [1e-3, 3e-4, 1e-4], min_length=1)
    eval_every: int = Field(default=100, gt=0, description="Epochs between validation checks")
    patience: int = Field(default=2000, gt=0, description="Epochs without improvement before a stage stops")
    max_epochs_per_stage: Optional[int] = Field(default=None, gt=0)
    validation_fraction: float = Field(default=0.1, gt=0, lt=1)
    sigma: Optional[float] = Field(default=None, gt=0, description="Overrides the dataset's burst scale")
    seed: int = Field(default=0, ge=0)

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "encoder_layers": [50, 50, 2, 2],
                "decoder_layers": [50, 50, 2, 2],
                "encoder_activation": "tanh",
                "decoder_activation": "tanh",
                "batch_clouds": 200,
                "lr_schedule": [1e-3, 3e-4, 1e-4],
                "eval_every": 100,
                "patience": 2000,
                "validation_fraction": 0.1,
                "seed": 0,
            }
        },
    )

    @field_validator("encoder_layers", "decoder_layers")
    @classmethod
    def positive_layers(cls, v: List[int]) -> List[int]:
        if any(size <= 0 for size in v):
            raise ValueError("layer sizes must be positive")
        return v

    @field_validator("lr_schedule")
    @classmethod
    def positive_rates(cls, v: List[float]) -> List[float]:
        if any(rate <= 0 for rate in v):
            raise ValueError("learning rates must be positive")
        return v

    @property
    def embedding_dim(self) -> int:
        return self.encoder_layers[-1]

    def with_embedding_dim(self, dim: int) -> "TrainConfig":
        """Same architecture with the linear tail resized to `dim` outputs."""
        tail = max(self.linear_tail, 1)
        layers = list(self.encoder_layers)
        layers[-tail:] = [dim] * min(tail, len(layers))
        return self.model_copy(update={"encoder_layers": layers})

    def with_output_dim(self, dim: int) -> "TrainConfig":
        """Same architecture with the decoder's linear tail resized to `dim` outputs."""
        tail = max(self.linear_tail, 1)
        layers = list(self.decoder_layers)
        layers[-tail:] = [dim] * min(tail, len(layers))
        return self.model_copy(update={"decoder_layers": layers})


def format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        field = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{field}: {err['msg']}")
    return "; ".join(parts)


def load_yaml_mapping(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    with path.open() as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must contain a mapping")
    return data


def load_train_config(path: Optional[Union[str, Path]], **overrides: Any) -> TrainConfig:
    """Read a TrainConfig from a YAML file, applying non-None overrides."""
    data = load_yaml_mapping(path) if path is not None else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.model_validate(data)
    except ValidationError as exc:
        raise UsageError(f"invalid training config: {format_validation_error(exc)}")


class FloorPlanConfig(BaseModel):
    """
    Floor plan file: a polygon outline with rectangular or polygonal holes.

    Either `transmitters` lists the positions explicitly or
    `n_transmitters` are drawn uniformly over free space with `seed`.
    """

    width: float = Field(..., gt=0, description="Plan width in pixels")
    height: float = Field(..., gt=0, description="Plan height in pixels")
    outline: List[Tuple[float, float]] = Field(..., min_length=3)
    holes: List[List[Tuple[float, float]]] = Field(default_factory=list)
    transmitters: Optional[List[Tuple[float, float]]] = None
    n_transmitters: int = Field(default=17, ge=0)
    seed: int = Field(default=0, ge=0)

    model_config = ConfigDict(extra="forbid")

    @field_validator("holes")
    @classmethod
    def holes_are_polygons(cls, v: List[List[Tuple[float, float]]]) -> List[List[Tuple[float, float]]]:
        if any(len(hole) < 3 for hole in v):
            raise ValueError("every hole needs at least three vertices")
        return v


def load_floor_plan_config(path: Union[str, Path]) -> FloorPlanConfig:
    try:
        return FloorPlanConfig.model_validate(load_yaml_mapping(path))
    except ValidationError as exc:
        raise UsageError(f"invalid floor plan: {format_validation_error(exc)}")
