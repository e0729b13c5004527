import os
from dotenv import load_dotenv
from typing import Literal

load_dotenv()

# "production" in your deployment environment
APP_ENV: str = os.getenv("APP_ENV", "development")

LogLevel = Literal["debug", "info", "warning"]
EPS_LOG: LogLevel = os.getenv("EPS_LOG", "info").lower() # type: ignore

# Empty string disables the per-run log file
LOG_DIR: str = os.getenv("EPS_LOG_DIR", "logs")

DEFAULT_OUT_DIR: str = os.getenv("EPS_OUT_DIR", "out")

SWEEP_CONCURRENCY_LIMIT: int = int(os.getenv("EPS_SWEEP_CONCURRENCY", "4"))

SCHEMA_VERSION: int = 1

OUTPUT_WRITE_ATTEMPTS: int = int(os.getenv("EPS_OUTPUT_WRITE_ATTEMPTS", "3"))
