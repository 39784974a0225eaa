"""Recursive cascade BSDE solver with jumps."""

import json
import os

from ._core import ValidationError, check, check_suites, experiment_names, philox
from . import _core

__all__ = ["ValidationError", "check", "check_suites", "evaluate", "experiment_names", "philox", "run"]


def _source(config):
    if isinstance(config, dict):
        return json.dumps(config), "config"
    path = os.fspath(config)
    with open(path, encoding="utf-8") as f:
        return f.read(), path


def run(config, *, seed=None, threads=None, output_dir=None, dump_brownian=False):
    """Run an experiment from a config path or dict and write its output files."""
    text, origin = _source(config)
    return _core.run(text, origin, seed, threads, output_dir, dump_brownian, True)


def evaluate(config, *, seed=None, threads=None):
    """Like run, without touching the filesystem."""
    text, origin = _source(config)
    return _core.run(text, origin, seed, threads, None, False, False)
