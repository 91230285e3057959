from fastapi import APIRouter
from api.v1.endpoints import embed, health

api_router = APIRouter()

api_router.include_router(
    embed.router,
    tags=["Embedding"]
)

api_router.include_router(
    health.router,
    tags=["Health"]
)
