"""Python bindings for the ptrm recursive-model toolkit."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import _core
from ._core import (
    CheckpointError,
    ContractViolation,
    best_q_at_k,
    cost_estimate,
    count_sudoku_solutions,
    mode_at_k,
    pass_at_k,
    pca_project,
    solve_sudoku,
)

__all__ = [
    "CheckpointError",
    "CommandError",
    "ContractViolation",
    "Model",
    "best_q_at_k",
    "commands",
    "cost_estimate",
    "count_sudoku_solutions",
    "mode_at_k",
    "pass_at_k",
    "pca_project",
    "run",
    "solve_sudoku",
]


class CommandError(RuntimeError):
    """A verb finished with a non-zero exit code."""

    def __init__(self, verb: str, code: int, log: str):
        super().__init__(f"{verb} exited with {code}: {log.strip()}")
        self.verb = verb
        self.code = code
        self.log = log


def commands() -> list[str]:
    return list(_core.commands())


def run(verb: str, config: Mapping[str, Any] | None = None, *, check: bool = True) -> tuple[int, str]:
    """Runs a CLI verb in-process. Paths in `config` may be Path objects."""
    text = json.dumps(dict(config or {}), default=os.fspath)
    code, log = _core.run(verb, text)
    if check and code != 0:
        raise CommandError(verb, code, log)
    return code, log


class Model:
    """A trained checkpoint loaded for inference."""

    def __init__(self, checkpoint_dir: str | os.PathLike[str]):
        self._core = _core.Model(Path(checkpoint_dir))
        self.config: dict[str, Any] = json.loads(self._core.config_json())
        self.manifest: dict[str, Any] = json.loads(self._core.manifest_json())

    def deterministic(self, x: Sequence[int], depth: int = 0) -> dict[str, Any]:
        return self._core.deterministic(list(x), depth)

    def sample(self, x: Sequence[int], rollouts: int = 1, depth: int = 0, sigma: float = 0.0,
               seed: int = 0, selector: str = "best-q") -> dict[str, Any]:
        return self._core.sample(list(x), rollouts, depth, sigma, seed, selector)
