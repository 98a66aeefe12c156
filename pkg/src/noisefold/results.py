"""Shared decode-result record and its CSV/JSON schema."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

RESULT_COLUMNS = (
    "method_tag",
    "iterations",
    "residual",
    "objective",
    "converged",
)


@dataclass
class DecodeResult:
    """Decoder output plus bookkeeping shared by every decoder module.

    `residual` is ||A x* - y||_2 against the original (unscaled) data;
    `info` carries method-specific diagnostics and is not part of the CSV
    schema.  Wall time is reported but excluded from determinism contracts.
    """

    xstar: np.ndarray
    iterations: int
    residual: float
    objective: float
    wall_time_ms: float
    converged: bool
    method_tag: str
    info: dict = field(default_factory=dict)

    def csv_row(self) -> dict:
        return {
            "method_tag": self.method_tag,
            "iterations": self.iterations,
            "residual": self.residual,
            "objective": self.objective,
            "converged": self.converged,
        }

    def to_json_dict(self, include_x: bool = True) -> dict:
        d = {
            "method_tag": self.method_tag,
            "iterations": self.iterations,
            "residual": self.residual,
            "objective": self.objective,
            "wall_time_ms": self.wall_time_ms,
            "converged": self.converged,
            "info": _jsonable(self.info),
        }
        if include_x:
            d["xstar"] = self.xstar.tolist()
        return d

    def to_json(self, include_x: bool = True) -> str:
        return json.dumps(self.to_json_dict(include_x=include_x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj
