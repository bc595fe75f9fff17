"""TOML experiment files.

A config file holds the :class:`~graphsvgd.experiments.ExperimentConfig`
fields at top level, with ``[steps]`` and ``[params]`` tables::

    experiment = "gaussian-grid"
    seed = 0
    trials = 10
    iterations = 500
    master_step = 1.5
    particle_counts = [50]
    algorithms = ["vanilla", "graphical-local", "exact"]

    [params]
    rows = 10
    cols = 10

Fields that are left out take the experiment's desk-scale defaults.
"""

from __future__ import annotations

import re
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .experiments import EXPERIMENTS, ExperimentConfig, default_config

__all__ = ["ConfigError", "load_config", "parse_config"]

_FIELDS = {
    "experiment", "algorithms", "particle_counts", "trials", "seed", "iterations",
    "master_step", "steps", "checkpoint_every", "params", "output",
}
_INT_FIELDS = {"trials", "seed", "iterations", "checkpoint_every"}


class ConfigError(ValueError):
    """A config problem, anchored to a line of the source file when possible."""

    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


def _line_of(text: str, key: str) -> int | None:
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=|^\s*\[{re.escape(key)}\]")
    for number, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return number
    return None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        match = re.search(r"line (\d+)", str(err))
        raise ConfigError(f"malformed TOML: {err}", int(match.group(1)) if match else None,
                          source) from err

    for key in raw:
        if key not in _FIELDS:
            raise ConfigError(f"unknown field {key!r}", _line_of(text, key), source)
    if "experiment" not in raw:
        raise ConfigError("missing field 'experiment'", 1, source)
    experiment = raw.pop("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {experiment!r}; expected one of {', '.join(EXPERIMENTS)}",
            _line_of(text, "experiment"), source,
        )
    for key in _INT_FIELDS & raw.keys():
        if not isinstance(raw[key], int) or isinstance(raw[key], bool):
            raise ConfigError(f"{key} must be an integer", _line_of(text, key), source)
    for key in ("steps", "params"):
        if key in raw and not isinstance(raw[key], dict):
            raise ConfigError(f"{key} must be a table", _line_of(text, key), source)
    try:
        return default_config(experiment, **raw)
    except (TypeError, ValueError) as err:
        # point at the first offending key that the message names; nested
        # keys first, since messages about them also mention their table
        message = str(err).replace("algorithm ", "algorithms ").replace("particle count",
                                                                           "particle_counts")
        line = next((_line_of(text, k) for k in list(raw.get("params", {})) + list(raw)
                     if k in message and _line_of(text, k)), None)
        raise ConfigError(str(err), line, source) from err


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err.strerror}", None, str(path)) from err
    return parse_config(text, str(path))
