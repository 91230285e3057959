from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field


class EmbedRequest(BaseModel):
    """Points in the observation space to embed."""

    points: List[List[float]] = Field(..., description="K x D observations")

    model_config = ConfigDict(
        json_schema_extra={"example": {"points": [[0.508, -0.492], [1.0, 1.0]]}}
    )


class EmbedResponse(BaseModel):
    codes: List[List[float]] = Field(..., description="K x d embedding coordinates")
    embedding_dim: int = Field(..., ge=1)


class DecodeRequest(BaseModel):
    """Embedding coordinates to map back to observations."""

    codes: List[List[float]] = Field(..., description="K x d embedding coordinates")

    model_config = ConfigDict(
        json_schema_extra={"example": {"codes": [[0.5, 0.2]]}}
    )


class DecodeResponse(BaseModel):
    points: List[List[float]] = Field(..., description="K x D reconstructed observations")
    ambient_dim: int = Field(..., ge=1)


class HealthResponse(BaseModel):
    status: str = Field(..., description="healthy or degraded")
    version: str
    model_loaded: bool
    embedding_dim: Optional[int] = None
    ambient_dim: Optional[int] = None
    sigma: Optional[float] = None
