from fastapi import APIRouter, Depends, HTTPException, status

from core.exceptions import LocaError, ShapeError
from core.logging import get_logger
from schemas.embedding import DecodeRequest, DecodeResponse, EmbedRequest, EmbedResponse
from services.embedding import EmbeddingService, get_embedding_service

logger = get_logger(__name__)
router = APIRouter()


def _unavailable(service: EmbeddingService) -> HTTPException:
    return HTTPException(
        status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
        detail=f"No model loaded: {service.load_error}",
    )


@router.post(
    "/embed",
    response_model=EmbedResponse,
    summary="Embed observations",
    description="Out-of-sample extension: push points through the trained encoder"
)
async def embed_points(request: EmbedRequest, service: EmbeddingService = Depends(get_embedding_service)):
    if not service.model_loaded:
        raise _unavailable(service)
    try:
        codes = service.embed(request.points)
    except ShapeError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=e.detail)
    except LocaError as e:
        logger.error(f"Error embedding points: {e.detail}")
        raise HTTPException(status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=e.detail)
    return EmbedResponse(codes=codes.tolist(), embedding_dim=service.model.embedding_dim)


@router.post(
    "/decode",
    response_model=DecodeResponse,
    summary="Decode embedding coordinates",
    description="Map codes back to the observation space with the trained decoder"
)
async def decode_codes(request: DecodeRequest, service: EmbeddingService = Depends(get_embedding_service)):
    if not service.model_loaded:
        raise _unavailable(service)
    try:
        points = service.reconstruct(request.codes)
    except ShapeError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=e.detail)
    except LocaError as e:
        logger.error(f"Error decoding codes: {e.detail}")
        raise HTTPException(status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=e.detail)
    return DecodeResponse(points=points.tolist(), ambient_dim=service.model.ambient_dim)
