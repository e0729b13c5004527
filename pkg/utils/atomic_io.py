import logging
import os
import tempfile
from pathlib import Path
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from elastic_sim.config import OUTPUT_WRITE_ATTEMPTS

log = logging.getLogger(__name__)


def atomic_write_text(path, text: str, attempts: int = OUTPUT_WRITE_ATTEMPTS) -> Path:
    """
    Writes `text` to `path` through a temporary file in the same directory and an
    os.replace, so readers never observe a partial file. OSErrors are retried.
    """
    target = Path(path)

    retry_config = Retrying(
        wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
        stop=stop_after_attempt(max(1, attempts)),
        retry=retry_if_exception_type(OSError),
        reraise=True
    )

    for attempt in retry_config:
        with attempt:
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
            try:
                with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
                    handle.write(text)
                os.replace(tmp_name, target)
            except BaseException:
                if os.path.exists(tmp_name):
                    os.unlink(tmp_name)
                raise
            if attempt.retry_state.attempt_number > 1:
                log.info(f"Wrote {target} on attempt {attempt.retry_state.attempt_number}")

    log.debug(f"Wrote {len(text)} chars to {target}")
    return target
