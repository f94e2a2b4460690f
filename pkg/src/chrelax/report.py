"""Relaxation comparison tables (OOV, ME#1/ME#2, exactness, timing) and their CSV/JSON forms."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import conic
from .distflow import (EXACTNESS_THRESHOLD, NetworkState, SweepError, is_exact, me_branch,
                       me_des, recover_feasible, soc_trajectory)
from .feeder import Feeder
from .problem import ObjectiveKind, RelaxKind, solve_desos

COLUMNS = ("instance", "objective", "relax", "status", "oov", "me1", "me2", "exact",
           "solve_time", "recovery_gap", "seed", "default_bounds")


@dataclass
class ExactnessReport:
    instance: str
    objective: str
    relax: str
    status: str
    oov: float | None = None
    me1: float | None = None
    me2: float | None = None
    exact: bool = False
    solve_time: float = 0.0
    recovery_gap: float | None = None
    seed: int | None = None
    default_bounds: bool = False

    def __post_init__(self):
        if self.exact and not (self.me1 is not None and is_exact(self.me1, self.me2)):
            raise ValueError("exact flag requires max(me1, me2) below the threshold")


@dataclass
class ComparisonTable:
    rows: list[ExactnessReport]
    ordering_ok: bool | None = None  # CH OOV >= SOCP OOV (minimization)
    states: dict[str, NetworkState] = field(default_factory=dict, repr=False)


def report_row(feeder: Feeder, objective, relax, *, snapshot: bool = False, period: int = 0,
               settings: conic.SolverSettings | None = None, recover: bool = True,
               state_out: dict | None = None) -> ExactnessReport:
    objective = ObjectiveKind.parse(objective)
    relax = RelaxKind.parse(relax)
    base = dict(instance=feeder.name, objective=objective.value, relax=relax.value,
                seed=feeder.meta.get("seed"), default_bounds=bool(feeder.meta.get("default_bounds", False)))
    res = solve_desos(feeder, objective, relax, snapshot, period, settings)
    sol = res.solution
    t = round(sol.solve_time, 2)
    if res.state is None:
        return ExactnessReport(status=sol.status, solve_time=t, **base)
    m1 = me_branch(res.feeder, res.state)
    m2 = me_des(res.feeder, res.state)
    gap = None
    if recover:
        try:
            _, rec = recover_feasible(res.feeder, res.state, objective, sol.objective)
            gap = rec.gap
        except SweepError:
            gap = None
    if state_out is not None:
        state_out[relax.value] = res.state
    return ExactnessReport(status=sol.status, oov=sol.objective, me1=m1, me2=m2,
                           exact=is_exact(m1, m2), solve_time=t, recovery_gap=gap, **base)


def compare(feeder: Feeder, objective, relaxes=("socp", "ch"), *, snapshot: bool = False,
            period: int = 0, settings: conic.SolverSettings | None = None,
            recover: bool = True) -> ComparisonTable:
    """One row per requested relaxation, in request order.  Solver failures stay in their row."""
    relaxes = [RelaxKind.parse(r) for r in relaxes]
    if not relaxes:
        raise ValueError("need at least one relaxation")
    states: dict[str, NetworkState] = {}
    rows = [report_row(feeder, objective, r, snapshot=snapshot, period=period, settings=settings,
                       recover=recover, state_out=states) for r in relaxes]
    by = {r.relax: r for r in rows}
    ordering = None
    if "socp" in by and "ch" in by and by["socp"].oov is not None and by["ch"].oov is not None:
        ordering = by["ch"].oov >= by["socp"].oov - 1e-6
    return ComparisonTable(rows=rows, ordering_ok=ordering, states=states)


# ---------------------------------------------------------------------------
# emission


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.5e}"
    return str(v)


def to_csv(rows: list[ExactnessReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def _json_val(v):
    if isinstance(v, (float, np.floating)):
        return float(_fmt(v)) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def to_json(rows: list[ExactnessReport]) -> str:
    doc = [{c: _json_val(getattr(r, c)) for c in COLUMNS} for r in rows]
    return json.dumps(doc, indent=2) + "\n"


def emit(table: ComparisonTable | list[ExactnessReport], fmt: str = "csv", path=None) -> str:
    """Render ``table`` as CSV or JSON; write it to ``path`` when given."""
    rows = table.rows if isinstance(table, ComparisonTable) else list(table)
    if not rows:
        raise ValueError("empty table")
    if fmt == "csv":
        text = to_csv(rows)
    elif fmt == "json":
        text = to_json(rows)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def read_table(text: str) -> list[ExactnessReport]:
    """Parse JSON produced by :func:`emit`."""
    names = {f.name for f in fields(ExactnessReport)}
    return [ExactnessReport(**{k: v for k, v in d.items() if k in names}) for d in json.loads(text)]


def plot_data(feeder: Feeder, state: NetworkState) -> str:
    """Tidy CSV (``period,quantity,entity,value``) of voltages, storage energy and price."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("period", "quantity", "entity", "value"))
    for t in range(state.horizon):
        for i, bus in enumerate(feeder.buses):
            w.writerow((t, "v", bus.id, _fmt(state.v[t, i])))
    if feeder.des_units and state.p_des.size:
        e = soc_trajectory(feeder, state)
        for t in range(state.horizon):
            for d, unit in enumerate(feeder.des_units):
                w.writerow((t, "energy", unit.bus, _fmt(e[t, d])))
                w.writerow((t, "p_des", unit.bus, _fmt(state.p_des[t, d])))
    price = feeder.profiles.price
    if price is not None and len(price) == state.horizon:
        for t, c in enumerate(price):
            w.writerow((t, "price", "", _fmt(c)))
    return buf.getvalue()


__all__ = ["ExactnessReport", "ComparisonTable", "compare", "report_row", "emit", "read_table",
           "plot_data", "to_csv", "to_json", "EXACTNESS_THRESHOLD"]
