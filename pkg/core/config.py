from typing import Optional

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    HYCNN_OUTPUT_ROOT: str = "./runs"  # one sub-directory per run
    HYCNN_LOG_LEVEL: str = "INFO"

    SINKHORN_TOL: float = 1e-6
    SINKHORN_MAX_ITER: int = 5000
    VALIDATION_EPS: float = 0.1

    DEFAULT_SEED: int = 0
    TORCH_THREADS: Optional[int] = None

    model_config = {
        "env_file": ".env",
        "case_sensitive": True,
    }


settings = Settings()
