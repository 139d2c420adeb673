"""Python access to the GeFL simulator core."""

import json

from . import _gefl
from ._gefl import (
    ConfigError,
    DomainError,
    NumericError,
    REPORT_SCHEMA_VERSION,
    ShapeError,
    TRACE_HEADER,
    aggregate,
    invert_feature,
    make_blobs,
    make_glyphs,
    mnd_ratio,
    normalize_config,
    run_and_write,
    sample,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "NumericError",
    "REPORT_SCHEMA_VERSION",
    "ShapeError",
    "TRACE_HEADER",
    "aggregate",
    "invert_feature",
    "make_blobs",
    "make_glyphs",
    "mnd_ratio",
    "normalize_config",
    "report",
    "run_and_write",
    "run_seed",
    "sample",
]


def run_seed(config: str, seed: int) -> dict:
    """Run one seed in memory and return the report document."""
    return json.loads(_gefl.run_seed_json(config, seed))


def report(directory: str) -> dict:
    """Summarize the per-seed reports in a run directory."""
    return json.loads(_gefl.report_json(directory))
