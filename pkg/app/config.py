"""
Run configuration loading: TOML file, then environment overrides, then
command-line overrides, validated into a RunConfig.
"""

import logging
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Union

from .schemas import RunConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "STREAMRL__"
CONFIG_DUMP = "config.json"


def parse_scalar(raw: str) -> Any:
    """Parse a TOML scalar (number, bool, quoted string, inline table); bare words stay strings."""
    try:
        return tomllib.loads(f"value = {raw}")["value"]
    except tomllib.TOMLDecodeError:
        return raw


def set_nested(data: Dict[str, Any], path: Sequence[str], value: Any) -> None:
    node = data
    for key in path[:-1]:
        child = node.get(key)
        if not isinstance(child, dict):
            child = {}
            node[key] = child
        node = child
    node[path[-1]] = value


def env_overrides(environ: Mapping[str, str], prefix: str = ENV_PREFIX) -> Dict[str, Any]:
    """
    Collect overrides from environment variables.

    STREAMRL__SDAC__TARGET_NOISE=0.0 becomes {"sdac": {"target_noise": 0.0}}.
    Variables naming an unknown top-level key are ignored with a warning.
    """
    overrides: Dict[str, Any] = {}
    for name in sorted(environ):
        if not name.startswith(prefix):
            continue
        path = [part.lower() for part in name[len(prefix):].split("__") if part]
        if not path:
            continue
        if path[0] not in RunConfig.model_fields:
            logger.warning("Ignoring %s: '%s' is not a config key", name, path[0])
            continue
        set_nested(overrides, path, parse_scalar(environ[name]))
    return overrides


def cli_overrides(assignments: Sequence[str]) -> Dict[str, Any]:
    """Turn ["sdac.target_noise=0", "seed=3"] into a nested override dict."""
    overrides: Dict[str, Any] = {}
    for item in assignments:
        if "=" not in item:
            raise ValueError(f"Override '{item}' must look like key=value")
        key, raw = item.split("=", 1)
        set_nested(overrides, key.strip().split("."), parse_scalar(raw.strip()))
    return overrides


def merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; `update` wins."""
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None,
                environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Build a validated RunConfig.

    Args:
        path: TOML file; omitted keys take their defaults
        overrides: Nested overrides applied last (command line)
        environ: Environment mapping, os.environ when None

    Returns:
        RunConfig

    Raises:
        pydantic.ValidationError: On unknown keys or out-of-range values
    """
    data: Dict[str, Any] = {}
    if path is not None:
        with Path(path).open("rb") as f:
            data = tomllib.load(f)
    data = merge(data, env_overrides(os.environ if environ is None else environ))
    if overrides:
        data = merge(data, overrides)
    return RunConfig.model_validate(data)


def dump_config(cfg: RunConfig, run_dir: Union[str, Path]) -> Path:
    """Write the effective configuration next to the run's metrics."""
    out = Path(run_dir) / CONFIG_DUMP
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(cfg.model_dump_json(indent=2) + "\n")
    return out
