"""Run reports and trace export.

Crude-stage trace rows carry ``iteration, step_kind, phi, psi,
max_abs_PDelta, objective``; the boosting stage extends rows with
``refine_step, nu, zeta, res_value, accepted``.  CSV output is
deterministic: floats are written with shortest round-trip ``repr``.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

CRUDE_COLUMNS = ("iteration", "step_kind", "phi", "psi",
                 "max_abs_PDelta", "objective")
REFINE_COLUMNS = CRUDE_COLUMNS + ("refine_step", "nu", "zeta",
                                  "res_value", "accepted")


@dataclass
class TraceRow:
    iteration: int
    step_kind: str  # "flow" | "width"
    phi: float
    psi: float
    max_abs_PDelta: float
    objective: float
    refine_step: int | None = None
    nu: float | None = None
    zeta: float | None = None
    res_value: float | None = None
    accepted: bool | None = None


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_trace_csv(rows) -> str:
    """Render trace rows as CSV text (deterministic byte-for-byte)."""
    extended = any(r.refine_step is not None for r in rows)
    columns = REFINE_COLUMNS if extended else CRUDE_COLUMNS
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in rows:
        d = asdict(r)
        buf.write(",".join(_cell(d[c]) for c in columns) + "\n")
    return buf.getvalue()


def write_trace_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_trace_csv(rows))


@dataclass
class SolveReport:
    """Summary of one solver run (crude stage, boost stage, or both)."""

    x: np.ndarray
    objective: float
    feasibility_residual: float
    flow_steps: int = 0
    width_steps: int = 0
    refine_steps: int = 0
    stalled: bool = False
    R_used: float | None = None
    M: float | None = None
    epsilon: float | None = None
    trace: list = field(default_factory=list, repr=False)
    extra: dict = field(default_factory=dict, repr=False)

    def summary_dict(self) -> dict:
        return {
            "objective": self.objective,
            "feasibility_residual": self.feasibility_residual,
            "flow_steps": self.flow_steps,
            "width_steps": self.width_steps,
            "refine_steps": self.refine_steps,
            "stalled": self.stalled,
            "R_used": self.R_used,
            "M": self.M,
            "epsilon": self.epsilon,
            "trace_rows": len(self.trace),
            "extra": _jsonable(self.extra),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary_dict(), indent=1, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
