"""Day-ahead storage scheduling as a cone program under the SOCP or convex-hull relaxation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import conic
from .distflow import NetworkState, fixed_injections
from .feeder import Feeder, check_feeder

GRID_EXPORT_FRACTION = 0.6


class ObjectiveKind(str, enum.Enum):
    F1 = "f1"  # grid energy cost
    F2 = "f2"  # network + transformer + storage losses
    F3 = "f3"  # absolute voltage deviation from set point

    @classmethod
    def parse(cls, s) -> "ObjectiveKind":
        return s if isinstance(s, cls) else cls(str(s).lower())


class RelaxKind(str, enum.Enum):
    SOCP = "socp"
    CH = "ch"

    @classmethod
    def parse(cls, s) -> "RelaxKind":
        return s if isinstance(s, cls) else cls(str(s).lower())


class ProblemError(ValueError):
    pass


class SolveError(RuntimeError):
    def __init__(self, status: str, msg: str = ""):
        super().__init__(msg or f"solver status: {status}")
        self.status = status


@dataclass
class VariableMap:
    """Column index of every model quantity, indexed ``[t, entity]``."""

    P: np.ndarray
    Q: np.ndarray
    l: np.ndarray
    v: np.ndarray
    p_grid: np.ndarray
    q_grid: np.ndarray
    p_des: np.ndarray
    q_des: np.ndarray
    p_loss: np.ndarray
    u: np.ndarray | None
    n_model: int

    FIELDS = ("P", "Q", "l", "v", "p_grid", "q_grid", "p_des", "q_des", "p_loss", "u")

    @property
    def horizon(self) -> int:
        return self.v.shape[0]

    def entries(self):
        """Yield ``(quantity, t, entity, column)`` for every mapped column."""
        for name in self.FIELDS:
            arr = getattr(self, name)
            if arr is None:
                continue
            for idx, col in np.ndenumerate(arr):
                t = idx[0]
                ent = idx[1] if len(idx) > 1 else None
                yield name, t, ent, int(col)


def _prepare(feeder: Feeder, snapshot: bool, period: int) -> Feeder:
    check_feeder(feeder)
    if snapshot and feeder.horizon > 1:
        feeder = feeder.snapshot(period)
    return feeder


def build_problem(feeder: Feeder, objective=ObjectiveKind.F2, relax=RelaxKind.CH,
                  snapshot: bool = False, period: int = 0) -> tuple[conic.ConicProblem, VariableMap]:
    """Assemble the relaxed scheduling problem.

    With ``snapshot`` the horizon collapses to ``period`` and the storage
    energy window is dropped.  Returns the cone program and the column map.
    """
    objective = ObjectiveKind.parse(objective)
    relax = RelaxKind.parse(relax)
    feeder = _prepare(feeder, snapshot, period)
    T = feeder.horizon
    nb, nl, nd = len(feeder.buses), len(feeder.branches), len(feeder.des_units)
    fr, to = feeder.from_index(), feeder.to_index()
    sub = feeder.substation
    R = feeder.sub_rating
    b = conic.ProblemBuilder()

    def grid(name, shape, lb=-math.inf, ub=math.inf):
        cols = np.empty(shape, dtype=int)
        for idx in np.ndindex(*shape):
            lo = lb[idx[1]] if isinstance(lb, np.ndarray) else lb
            hi = ub[idx[1]] if isinstance(ub, np.ndarray) else ub
            cols[idx] = b.add_var(f"{name}{list(idx)}", lo, hi)
        return cols

    vmin = np.array([x.v_min for x in feeder.buses])
    vmax = np.array([x.v_max for x in feeder.buses])
    vnom = np.array([x.v_nom for x in feeder.buses])
    lmax = np.array([x.l_max for x in feeder.branches])
    smax = np.array([x.s_max for x in feeder.branches])
    r = np.array([x.r for x in feeder.branches])
    x_ = np.array([x.x for x in feeder.branches])
    units = feeder.des_units
    ploss_max = np.array([d.r_eq * d.s_max ** 2 / feeder.buses[i].v_min
                          for d, i in zip(units, feeder.des_index())])

    P = grid("P", (T, nl))
    Q = grid("Q", (T, nl))
    L = grid("l", (T, nl), 0.0, lmax)
    V = grid("v", (T, nb), vmin, vmax)
    glo, ghi = (-GRID_EXPORT_FRACTION * R, R) if math.isfinite(R) else (-math.inf, math.inf)
    PG = grid("p_grid", (T, 1), glo, ghi)[:, 0]
    QG = grid("q_grid", (T, 1), glo, ghi)[:, 0]
    PD = grid("p_des", (T, nd))
    QD = grid("q_des", (T, nd))
    PL = grid("p_loss", (T, nd), 0.0, ploss_max)
    U = grid("u", (T, nb), 0.0) if objective is ObjectiveKind.F3 else None
    vmap = VariableMap(P=P, Q=Q, l=L, v=V, p_grid=PG, q_grid=QG, p_des=PD, q_des=QD,
                       p_loss=PL, u=U, n_model=b.n)

    p_fix, q_fix = fixed_injections(feeder)
    k = feeder.k_tx()
    des_at = feeder.des_index()
    kids = feeder.children()
    up = {int(to[j]): j for j in range(nl)}

    for t in range(T):
        for i in range(nb):
            rp: dict[int, float] = {}
            rq: dict[int, float] = {}
            for j in kids[i]:
                rp[P[t, j]] = 1.0
                rq[Q[t, j]] = 1.0
            if i in up:
                j = up[i]
                rp[P[t, j]] = -1.0
                rp[L[t, j]] = r[j]
                rq[Q[t, j]] = -1.0
                rq[L[t, j]] = x_[j]
            for d in np.flatnonzero(des_at == i):
                rp[PD[t, d]] = -1.0
                rq[QD[t, d]] = -1.0
            if i == sub:
                rp[PG[t]] = -1.0
                rq[QG[t]] = -1.0
            if k[i]:
                rp[V[t, i]] = rp.get(V[t, i], 0.0) + k[i]
            b.add_eq(rp, p_fix[t, i], "active_balance")
            b.add_eq(rq, q_fix[t, i], "reactive_balance")
        for j in range(nl):
            b.add_eq({V[t, fr[j]]: 1.0, V[t, to[j]]: -1.0, P[t, j]: -2 * r[j], Q[t, j]: -2 * x_[j],
                      L[t, j]: r[j] ** 2 + x_[j] ** 2}, 0.0, "voltage_drop")

    for t in range(T):
        for j in range(nl):
            i = fr[j]
            b.add_cone("rsoc", [int(L[t, j]), ({int(V[t, i]): 0.5}, 0.0), int(P[t, j]), int(Q[t, j])],
                       f"branch_cone[{t},{j}]")
            b.add_cone("soc", [({}, smax[j]), int(P[t, j]), int(Q[t, j])], f"thermal[{t},{j}]")
            if relax is RelaxKind.CH:
                b.add_le({L[t, j]: vmax[i], V[t, i]: lmax[j]}, lmax[j] * (vmax[i] + vnom[i]), "branch_cut")
        for d, unit in enumerate(units):
            i = des_at[d]
            b.add_cone("soc", [({}, unit.s_max), int(PD[t, d]), int(QD[t, d])], f"converter[{t},{d}]")
            b.add_cone("rsoc", [int(PL[t, d]), ({int(V[t, i]): 0.5}, 0.0),
                                ({int(PD[t, d]): math.sqrt(unit.r_eq)}, 0.0),
                                ({int(QD[t, d]): math.sqrt(unit.r_cvt)}, 0.0)], f"des_cone[{t},{d}]")
            if relax is RelaxKind.CH:
                e = unit.r_eq * unit.s_max ** 2
                b.add_cone("rsoc", [({int(PL[t, d]): -vmin[i]}, e), ({}, 0.5),
                                    ({int(QD[t, d]): math.sqrt(unit.r_batt)}, 0.0)], f"des_asym[{t},{d}]")
                b.add_le({PL[t, d]: vmin[i] * vmax[i], V[t, i]: e}, e * (vmin[i] + vmax[i]), "des_chord")

    if not snapshot and T > 1 and units:
        dt = feeder.profiles.dt
        for d, unit in enumerate(units):
            for t in range(T):
                row = {}
                for s in range(t + 1):
                    row[PD[s, d]] = dt
                    row[PL[s, d]] = dt
                b.add_le(row, unit.e_surplus - unit.e_min, "soc_window")
                b.add_le({c: -a for c, a in row.items()}, unit.e_max - unit.e_surplus, "soc_window")

    if U is not None:
        for t in range(T):
            for i, bus in enumerate(feeder.buses):
                vs = bus.v_set_at(t)
                b.add_le({V[t, i]: 1.0, U[t, i]: -1.0}, vs, "epigraph")
                b.add_le({V[t, i]: -1.0, U[t, i]: -1.0}, -vs, "epigraph")

    cvec = objective_vector(feeder, objective, vmap)
    for col in np.flatnonzero(cvec):
        b.add_objective(int(col), cvec[col])
    return b.build(), vmap


def objective_vector(feeder: Feeder, objective, varmap: VariableMap) -> np.ndarray:
    """Linear objective over the model columns (length ``varmap.n_model``)."""
    objective = ObjectiveKind.parse(objective)
    c = np.zeros(varmap.n_model)
    T = varmap.horizon
    if objective is ObjectiveKind.F1:
        price = feeder.profiles.price
        if price is None:
            raise ProblemError("objective f1 needs a price series")
        if len(price) != T:
            raise ProblemError("price series length does not match the horizon")
        for t in range(T):
            c[varmap.p_grid[t]] += price[t] * feeder.profiles.dt * feeder.base_mva
    elif objective is ObjectiveKind.F2:
        r = np.array([x.r for x in feeder.branches])
        k = feeder.k_tx()
        for t in range(T):
            c[varmap.l[t]] += r
            c[varmap.v[t]] += k
            c[varmap.p_loss[t]] += 1.0
    else:
        if varmap.u is None:
            raise ProblemError("f3 needs epigraph columns")
        c[varmap.u.ravel()] = 1.0
    return c


def evaluate_objective(feeder: Feeder, state: NetworkState, objective) -> float:
    """Objective of an operating point, without relaxation variables."""
    objective = ObjectiveKind.parse(objective)
    T = state.horizon
    if objective is ObjectiveKind.F1:
        price = np.asarray(feeder.profiles.price[:T]) if T == feeder.horizon else None
        if price is None:
            raise ProblemError("state horizon does not match the price series")
        return float(np.sum(price * state.p_grid) * feeder.profiles.dt * feeder.base_mva)
    if objective is ObjectiveKind.F2:
        r = np.array([x.r for x in feeder.branches])
        return float(np.sum(state.l * r) + np.sum(state.v * feeder.k_tx()) + np.sum(state.p_loss))
    vset = np.array([[b.v_set_at(t) for b in feeder.buses] for t in range(T)])
    return float(np.abs(state.v - vset).sum())


def extract_state(solution: conic.ConicSolution, varmap: VariableMap, feeder: Feeder,
                  snapshot: bool = False, period: int = 0) -> NetworkState:
    """Map solver columns back to a :class:`NetworkState`."""
    if not solution.ok:
        raise SolveError(solution.status)
    feeder = _prepare(feeder, snapshot, period)
    x = solution.x
    p_des = x[varmap.p_des]
    q_des = x[varmap.q_des]
    p_inj, q_inj = fixed_injections(feeder, p_des, q_des)
    return NetworkState(P=x[varmap.P], Q=x[varmap.Q], l=x[varmap.l], v=x[varmap.v],
                        p_grid=x[varmap.p_grid], q_grid=x[varmap.q_grid], p_inj=p_inj, q_inj=q_inj,
                        p_des=p_des, q_des=q_des, p_loss=x[varmap.p_loss],
                        u=None if varmap.u is None else x[varmap.u])


def state_to_vector(state: NetworkState, varmap: VariableMap, n: int) -> np.ndarray:
    """Inverse of :func:`extract_state` on the model columns (aux columns left 0)."""
    x = np.zeros(n)
    for name in VariableMap.FIELDS:
        cols = getattr(varmap, name)
        val = getattr(state, name)
        if cols is None or val is None:
            continue
        x[cols] = val
    return x


@dataclass
class DesosResult:
    feeder: Feeder  # the feeder actually solved (snapshot-collapsed if requested)
    problem: conic.ConicProblem
    varmap: VariableMap
    solution: conic.ConicSolution
    state: NetworkState | None


def solve_desos(feeder: Feeder, objective=ObjectiveKind.F2, relax=RelaxKind.CH, snapshot=False,
                period: int = 0, settings: conic.SolverSettings | None = None) -> DesosResult:
    prob, vmap = build_problem(feeder, objective, relax, snapshot, period)
    sol = conic.solve(prob, settings)
    solved = _prepare(feeder, snapshot, period)
    state = extract_state(sol, vmap, solved) if sol.ok else None
    return DesosResult(solved, prob, vmap, sol, state)
