import json
import logging
import re
from pathlib import Path
from pydantic import ValidationError
from typing import Any, Optional, Sequence, Tuple

from .errors import ConfigError, InputError
from .schemas import FeatureFlags, ScenarioConfig

log = logging.getLogger(__name__)

_DOTTED_FIELD = re.compile(r"\b([a-z_]+(?:\.[a-z_]+)+)\b")


def _locate_line(text: str, loc: Sequence[Any]) -> Optional[int]:
    """
    Best-effort line of the JSON key addressed by a pydantic error location.

    Keys are searched in order, each one after the previous match, so nested keys
    resolve to the occurrence inside their parent object.
    """
    position, found = 0, None
    for key in loc:
        if not isinstance(key, str):
            continue
        index = text.find(f'"{key}"', position)
        if index < 0:
            continue
        position, found = index, index
    if found is None:
        return None
    return text.count("\n", 0, found) + 1


def _format_validation_error(error: ValidationError) -> Tuple[str, Sequence[Any]]:
    first = error.errors()[0]
    loc = first.get("loc", ())
    if not loc:
        # whole-config checks name the offending field in their message
        named = _DOTTED_FIELD.search(str(first.get("msg", "")))
        if named:
            loc = tuple(named.group(1).split("."))
    where = ".".join(str(part) for part in loc) or "<root>"
    extra = f" (+{error.error_count() - 1} more)" if error.error_count() > 1 else ""
    return f"{where}: {first.get('msg')}{extra}", loc


def parse_scenario(text: str, path: str = "<string>") -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", path=path, line=e.lineno) from e

    if not isinstance(data, dict):
        raise ConfigError("top-level value must be a JSON object", path=path, line=1)

    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        message, loc = _format_validation_error(e)
        raise ConfigError(message, path=path, line=_locate_line(text, loc)) from e


def load_scenario(path) -> ScenarioConfig:
    """
    Reads and validates a scenario file.

    A relative gradient-norm trace path is resolved against the file's directory and must
    exist.
    """
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read config {config_path}: {e.strerror or e}") from e

    config = parse_scenario(text, str(config_path))

    grad_norms = config.grad_norms
    if grad_norms.kind == "trace":
        trace = Path(grad_norms.trace_path)
        if not trace.is_absolute():
            trace = (config_path.parent / trace).resolve()
        if not trace.is_file():
            raise ConfigError(f"gradient-norm trace not found: {trace}", path=str(config_path),
                              line=_locate_line(text, ("grad_norms", "trace_path")))
        config = config.model_copy(update={"grad_norms": grad_norms.model_copy(update={"trace_path": str(trace)})})

    log.info(f"Loaded scenario '{config.name}' from {config_path}")
    return config


def canonical_json(config: ScenarioConfig) -> str:
    """Sorted-key JSON of the fully defaulted config; equal configs give equal strings."""
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, indent=2)


def apply_overrides(config: ScenarioConfig, *, flags: Optional[str] = None, out_dir: Optional[str] = None,
                    seed: Optional[int] = None) -> ScenarioConfig:
    update = {}
    if flags is not None:
        update["features"] = FeatureFlags.from_tokens(flags)
    if out_dir is not None:
        update["output"] = config.output.model_copy(update={"out_dir": out_dir})
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        update["seed"] = seed
    if not update:
        return config
    return config.model_copy(update=update)


def with_updates(config: ScenarioConfig, section: str, **fields) -> ScenarioConfig:
    """Revalidated copy with `fields` replaced inside one config section."""
    data = config.model_dump(mode="json")
    data[section].update(fields)
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        message, _ = _format_validation_error(e)
        raise ConfigError(message) from e
