from typing import Annotated
from pydantic import Field, ConfigDict
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    model_config = ConfigDict(env_file=".env", case_sensitive=True)

    LOG_LEVEL: str = Field(default="INFO")

    # Output
    OUTPUT_ROOT: str = Field(
        default="runs",
        description="Default root directory for cli outputs",
    )

    # Parallel evaluation
    EVAL_MAX_WORKERS: Annotated[int, Field(le=16, ge=1)] = 4
    SAMPLE_CHUNK_SIZE: Annotated[int, Field(ge=64)] = 4096

    # Result database
    DATABASE_URL: str = Field(
        default="sqlite:///ca_ama_runs.db"
    )
    PERSIST_RESULTS: bool = Field(default=True)


settings = Settings()
