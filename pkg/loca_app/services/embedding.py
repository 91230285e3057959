from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from core.config import settings
from core.exceptions import LocaError
from core.logging import get_logger
from ml.loca import TrainedLoca, decode, encode
from ml.serialization import load_trained

logger = get_logger(__name__)


class EmbeddingService:
    """Serves encode/decode for one trained model directory."""

    def __init__(self, model_dir: Optional[Path] = None, model: Optional[TrainedLoca] = None):
        self.model_dir = Path(model_dir or settings.MODEL_DIR)
        self._model = model
        self.load_error: Optional[str] = None

    @property
    def model(self) -> Optional[TrainedLoca]:
        if self._model is None and self.load_error is None:
            try:
                self._model = load_trained(self.model_dir)
                logger.info(f"Loaded model from {self.model_dir} (d={self._model.embedding_dim})")
            except LocaError as e:
                self.load_error = e.detail
                logger.warning(f"Model not loaded from {self.model_dir}: {e.detail}")
        return self._model

    @property
    def model_loaded(self) -> bool:
        return self.model is not None

    def _require_model(self) -> TrainedLoca:
        model = self.model
        if model is None:
            raise LocaError(f"no model available: {self.load_error}")
        return model

    def embed(self, points) -> np.ndarray:
        return encode(self._require_model(), np.asarray(points, dtype=np.float64))

    def reconstruct(self, codes) -> np.ndarray:
        return decode(self._require_model(), np.asarray(codes, dtype=np.float64))


@lru_cache
def get_embedding_service() -> EmbeddingService:
    return EmbeddingService()
