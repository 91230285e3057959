from contextlib import asynccontextmanager
import time

import uvicorn
from fastapi import FastAPI, Request, status
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from api.v1.endpoints.router import api_router
from core.config import settings
from core.exceptions import LocaError
from core.logging import get_logger, setup_logging
from services.embedding import get_embedding_service

setup_logging(level="DEBUG" if settings.DEBUG else settings.LOG_LEVEL)
logger = get_logger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    logger.info(f"Starting {settings.APP_NAME} v{settings.VERSION}")
    service = get_embedding_service()
    if service.model_loaded:
        logger.info(f"Serving model from {service.model_dir}")
    else:
        logger.warning(f"No model at {service.model_dir}; embed and decode will return 503")

    yield

    logger.info("Shutting down application")


app = FastAPI(
    title=settings.APP_NAME,
    version=settings.VERSION,
    description="Encode observations into LOCA coordinates and decode them back",
    lifespan=lifespan,
    docs_url="/api/docs",
    redoc_url="/api/redoc",
    openapi_url="/api/openapi.json"
)


@app.middleware("http")
async def add_process_time_header(request: Request, call_next):
    start_time = time.time()
    response = await call_next(request)
    response.headers["X-Process-Time"] = str(time.time() - start_time)
    return response


@app.exception_handler(RequestValidationError)
async def validation_exception_handler(request: Request, exc: RequestValidationError):
    logger.error(f"Validation error: {exc.errors()}")
    return JSONResponse(
        status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
        content={"detail": "Validation error", "errors": exc.errors()}
    )


@app.exception_handler(LocaError)
async def loca_exception_handler(request: Request, exc: LocaError):
    logger.error(f"{exc.code}: {exc.detail}")
    code = status.HTTP_422_UNPROCESSABLE_ENTITY if exc.exit_code == 2 else status.HTTP_500_INTERNAL_SERVER_ERROR
    return JSONResponse(status_code=code, content={"detail": exc.detail, "code": exc.code})


@app.get("/", tags=["Root"])
async def root():
    return {
        "name": settings.APP_NAME,
        "version": settings.VERSION,
        "status": "running",
        "docs": "/api/docs"
    }


app.include_router(api_router, prefix="/api/v1")


if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host="0.0.0.0",
        port=8001,
        reload=settings.DEBUG,
    )
