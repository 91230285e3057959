from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application configuration."""

    # App settings
    APP_NAME: str = "LOCA Embedding Service"
    VERSION: str = "1.0.0"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Parallelism (joblib workers for kernel assembly)
    LOCA_THREADS: int = 1
    KERNEL_BLOCK_ROWS: int = 256

    # Model served by the API
    MODEL_DIR: str = "models/loca"

    # Evaluation
    STRESS_FULL_PAIR_LIMIT: int = 2000
    STRESS_PAIR_SAMPLES: int = 100_000
    RESULT_SIGNIFICANT_DIGITS: int = 12

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True)


settings = Settings()
