from fastapi import APIRouter, Depends

from core.config import settings
from core.logging import get_logger
from schemas.embedding import HealthResponse
from services.embedding import EmbeddingService, get_embedding_service

logger = get_logger(__name__)
router = APIRouter()


@router.get(
    "/health",
    response_model=HealthResponse,
    summary="Health check",
    description="Service status and the served model's dimensions"
)
async def health_check(service: EmbeddingService = Depends(get_embedding_service)):
    """Reports `degraded` when no trained model could be loaded."""
    model = service.model
    if model is None:
        return HealthResponse(status="degraded", version=settings.VERSION, model_loaded=False)
    return HealthResponse(
        status="healthy",
        version=settings.VERSION,
        model_loaded=True,
        embedding_dim=model.embedding_dim,
        ambient_dim=model.ambient_dim,
        sigma=model.sigma_used,
    )
