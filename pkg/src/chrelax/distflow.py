"""DistFlow residuals, backward/forward sweep power flow and exactness metrics."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .feeder import Feeder

EXACTNESS_THRESHOLD = 1e-3  # pu


class SweepError(RuntimeError):
    def __init__(self, msg: str, residual: float = float("nan")):
        super().__init__(msg)
        self.residual = residual


class VoltageCollapseError(SweepError):
    pass


@dataclass(frozen=True)
class BranchFlowPoint:
    """``(P, Q, l, v)`` of one branch; ``v`` is the sending-bus squared voltage."""

    P: float
    Q: float
    l: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.P, self.Q, self.l, self.v])


@dataclass
class NetworkState:
    """Operating point over ``T`` periods.

    ``p_inj``/``q_inj`` hold the fixed part of each bus injection (PV minus
    load plus storage dispatch); the grid supply at the substation and the
    transformer term ``k_tx * v`` are kept separate.
    """

    P: np.ndarray          # (T, n_branch)
    Q: np.ndarray
    l: np.ndarray
    v: np.ndarray          # (T, n_bus)
    p_grid: np.ndarray     # (T,)
    q_grid: np.ndarray
    p_inj: np.ndarray      # (T, n_bus)
    q_inj: np.ndarray
    p_des: np.ndarray = field(default_factory=lambda: np.zeros((1, 0)))  # (T, n_des)
    q_des: np.ndarray = field(default_factory=lambda: np.zeros((1, 0)))
    p_loss: np.ndarray = field(default_factory=lambda: np.zeros((1, 0)))
    u: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.v.shape[0]

    def branch_point(self, feeder: Feeder, j: int, t: int = 0) -> BranchFlowPoint:
        i = feeder.bus_index[feeder.branches[j].from_bus]
        return BranchFlowPoint(float(self.P[t, j]), float(self.Q[t, j]), float(self.l[t, j]),
                               float(self.v[t, i]))

    def check_shape(self, feeder: Feeder) -> None:
        T, nb, nl, nd = self.horizon, len(feeder.buses), len(feeder.branches), len(feeder.des_units)
        expect = {"P": (T, nl), "Q": (T, nl), "l": (T, nl), "v": (T, nb), "p_grid": (T,),
                  "q_grid": (T,), "p_inj": (T, nb), "q_inj": (T, nb)}
        if nd or self.p_des.size:
            expect.update(p_des=(T, nd), q_des=(T, nd), p_loss=(T, nd))
        for name, shape in expect.items():
            got = np.shape(getattr(self, name))
            if got != shape:
                raise ValueError(f"state.{name} has shape {got}, feeder needs {shape}")


def fixed_injections(feeder: Feeder, p_des: np.ndarray | None = None,
                     q_des: np.ndarray | None = None, period: int | None = None):
    """PV - load (+ storage dispatch) per bus, shape ``(T, n_bus)``."""
    p = feeder.pv() - feeder.load_p()
    q = -feeder.load_q()
    if period is not None:
        p, q = p[period:period + 1], q[period:period + 1]
    if feeder.des_units and p_des is not None:
        d = feeder.des_index()
        np.add.at(p, (slice(None), d), p_des)
        np.add.at(q, (slice(None), d), q_des)
    return p, q


def eval_residuals(feeder: Feeder, state: NetworkState) -> dict[str, np.ndarray]:
    """Residuals of the four DistFlow families; all zero iff the state is an exact power flow.

    Keys: ``active_balance``/``reactive_balance`` (T, n_bus),
    ``voltage_drop``/``branch_flow`` (T, n_branch).  ``branch_flow`` is the
    signed ``v*l - P**2 - Q**2``.
    """
    state.check_shape(feeder)
    fr, to = feeder.from_index(), feeder.to_index()
    r = np.array([b.r for b in feeder.branches])
    x = np.array([b.x for b in feeder.branches])
    z2 = r * r + x * x
    sub = feeder.substation
    T, nb = state.v.shape

    out_p = np.zeros((T, nb))
    out_q = np.zeros((T, nb))
    np.add.at(out_p, (slice(None), fr), state.P)
    np.add.at(out_q, (slice(None), fr), state.Q)
    np.add.at(out_p, (slice(None), to), -(state.P - r * state.l))
    np.add.at(out_q, (slice(None), to), -(state.Q - x * state.l))

    inj_p = state.p_inj - feeder.k_tx() * state.v
    inj_q = state.q_inj.copy()
    inj_p[:, sub] += state.p_grid
    inj_q[:, sub] += state.q_grid

    vi, vk = state.v[:, fr], state.v[:, to]
    return {
        "active_balance": inj_p - out_p,
        "reactive_balance": inj_q - out_q,
        "voltage_drop": vi - vk - 2 * (r * state.P + x * state.Q) + z2 * state.l,
        "branch_flow": vi * state.l - state.P ** 2 - state.Q ** 2,
    }


def max_residual(res: dict[str, np.ndarray]) -> float:
    return max((float(np.max(np.abs(a), initial=0.0)) for a in res.values()), default=0.0)


def sweep_solve(feeder: Feeder, p_inj, q_inj, v_root, *, max_iter: int = 200,
                tol: float = 1e-10, damping: float = 1.0) -> NetworkState:
    """Backward/forward sweep on the squared-voltage DistFlow equations.

    ``p_inj``/``q_inj`` are fixed bus injections of shape ``(n_bus,)`` or
    ``(T, n_bus)``; the substation supply and transformer losses are
    solved for.  ``damping`` relaxes the current update (1.0 = plain
    fixed-point).
    """
    p_inj = np.atleast_2d(np.asarray(p_inj, dtype=float))
    q_inj = np.atleast_2d(np.asarray(q_inj, dtype=float))
    T, nb = p_inj.shape
    if nb != len(feeder.buses) or q_inj.shape != p_inj.shape:
        raise ValueError("injection arrays do not match the feeder")
    v_root = np.broadcast_to(np.asarray(v_root, dtype=float), (T,)).copy()
    if np.any(v_root <= 0):
        raise VoltageCollapseError("root voltage must be positive")

    nl = len(feeder.branches)
    fr, to = feeder.from_index(), feeder.to_index()
    r = np.array([b.r for b in feeder.branches])
    x = np.array([b.x for b in feeder.branches])
    z2 = r * r + x * x
    k = feeder.k_tx()
    kids = feeder.children()
    order = feeder.topo_order()
    sub = feeder.substation

    v = np.repeat(v_root[:, None], nb, axis=1)
    ell = np.zeros((T, nl))
    P = np.zeros((T, nl))
    Q = np.zeros((T, nl))

    def backward(ell, v):
        for j in reversed(order):
            kb = to[j]
            P[:, j] = -(p_inj[:, kb] - k[kb] * v[:, kb]) + r[j] * ell[:, j]
            Q[:, j] = -q_inj[:, kb] + x[j] * ell[:, j]
            for c in kids[kb]:
                P[:, j] += P[:, c]
                Q[:, j] += Q[:, c]

    delta = np.inf
    for it in range(max_iter):
        backward(ell, v)
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is caught below
            ell_new = (P ** 2 + Q ** 2) / v[:, fr]
        v_new = v.copy()
        with np.errstate(over="ignore", invalid="ignore"):
            for j in order:
                v_new[:, to[j]] = v_new[:, fr[j]] - 2 * (r[j] * P[:, j] + x[j] * Q[:, j]) + z2[j] * ell_new[:, j]
        if np.any(v_new <= 0) or not np.all(np.isfinite(v_new)):
            raise VoltageCollapseError(f"voltage collapse at iteration {it}", residual=float("inf"))
        delta = max(float(np.max(np.abs(v_new - v), initial=0.0)),
                    float(np.max(np.abs(ell_new - ell), initial=0.0)))
        ell = ell_new if damping == 1.0 else (1 - damping) * ell + damping * ell_new
        v = v_new
        if delta < tol:
            break
    else:
        raise SweepError(f"sweep did not converge in {max_iter} iterations (last step {delta:.3e})",
                         residual=delta)

    # final consistent pass: flows from the converged currents, currents from (1d)
    backward(ell, v)
    ell = (P ** 2 + Q ** 2) / v[:, fr]
    for j in order:
        v[:, to[j]] = v[:, fr[j]] - 2 * (r[j] * P[:, j] + x[j] * Q[:, j]) + z2[j] * ell[:, j]
    p_grid = -(p_inj[:, sub] - k[sub] * v[:, sub])
    q_grid = -q_inj[:, sub].copy()
    for c in kids[sub]:
        p_grid += P[:, c]
        q_grid += Q[:, c]
    nd = len(feeder.des_units)  # any storage dispatch is already inside p_inj/q_inj
    return NetworkState(P=P.copy(), Q=Q.copy(), l=ell, v=v, p_grid=p_grid, q_grid=q_grid,
                        p_inj=p_inj.copy(), q_inj=q_inj.copy(), p_des=np.zeros((T, nd)),
                        q_des=np.zeros((T, nd)), p_loss=np.zeros((T, nd)))


def me_branch(feeder: Feeder, state: NetworkState) -> float:
    """Largest signed branch-equation gap ``v*l - P**2 - Q**2`` over branches and periods."""
    if not feeder.branches:
        return 0.0
    fr = feeder.from_index()
    gap = state.v[:, fr] * state.l - state.P ** 2 - state.Q ** 2
    return float(gap.max())


def me_des(feeder: Feeder, state: NetworkState) -> float | None:
    """Largest signed storage-loss gap; ``None`` (not applicable) without storage."""
    if not feeder.des_units:
        return None
    r_eq = np.array([d.r_eq for d in feeder.des_units])
    r_cvt = np.array([d.r_cvt for d in feeder.des_units])
    v = state.v[:, feeder.des_index()]
    gap = state.p_loss * v - r_eq * state.p_des ** 2 - r_cvt * state.q_des ** 2
    return float(gap.max())


def is_exact(me1: float, me2: float | None) -> bool:
    return max(me1, me2 if me2 is not None else -np.inf) < EXACTNESS_THRESHOLD


@dataclass
class RecoveryReport:
    objective: float
    gap: float | None
    max_residual: float
    bound_violation: float


def bound_violation(feeder: Feeder, state: NetworkState) -> float:
    """Largest violation of voltage, current, thermal, grid and storage-energy limits."""
    viol = [0.0]
    vmin = np.array([b.v_min for b in feeder.buses])
    vmax = np.array([b.v_max for b in feeder.buses])
    viol.append(float(np.max(np.maximum(vmin - state.v, state.v - vmax), initial=0.0)))
    if feeder.branches:
        lmax = np.array([b.l_max for b in feeder.branches])
        smax = np.array([b.s_max for b in feeder.branches])
        viol.append(float(np.max(state.l - lmax)))
        viol.append(float(np.max(state.P ** 2 + state.Q ** 2 - smax ** 2)))
    R = feeder.sub_rating
    if np.isfinite(R):
        for g in (state.p_grid, state.q_grid):
            viol.append(float(np.max(np.maximum(-0.6 * R - g, g - R))))
    if feeder.des_units and state.p_des.size:
        smax = np.array([d.s_max for d in feeder.des_units])
        viol.append(float(np.max(state.p_des ** 2 + state.q_des ** 2 - smax ** 2)))
        if state.horizon > 1:
            e = soc_trajectory(feeder, state)
            emin = np.array([d.e_min for d in feeder.des_units])
            emax = np.array([d.e_max for d in feeder.des_units])
            viol.append(float(np.max(np.maximum(emin - e, e - emax))))
    return max(0.0, max(viol))


def soc_trajectory(feeder: Feeder, state: NetworkState) -> np.ndarray:
    """Stored energy after each period, shape ``(T, n_des)``."""
    e0 = np.array([d.e_surplus for d in feeder.des_units])
    return e0 - np.cumsum(state.p_des + state.p_loss, axis=0) * feeder.profiles.dt


def recover_feasible(feeder: Feeder, relaxed: NetworkState, objective=None,
                     oov: float | None = None, **sweep_kw) -> tuple[NetworkState, RecoveryReport]:
    """Exact power flow at the relaxed storage dispatch and substation voltage.

    Storage losses are re-evaluated from the loss equation at the recovered
    voltage.  ``gap`` is the recovered objective minus ``oov``.
    """
    from .problem import evaluate_objective  # circular at import time

    T = relaxed.horizon
    p_des = relaxed.p_des if feeder.des_units else None
    q_des = relaxed.q_des if feeder.des_units else None
    p_inj, q_inj = fixed_injections(feeder, p_des, q_des)
    if p_inj.shape[0] != T:  # snapshot solution of a multi-period feeder
        raise ValueError("relaxed state horizon does not match the feeder; pass feeder.snapshot()")
    state = sweep_solve(feeder, p_inj, q_inj, relaxed.v[:, feeder.substation], **sweep_kw)
    if feeder.des_units:
        d = feeder.des_index()
        r_eq = np.array([u.r_eq for u in feeder.des_units])
        r_cvt = np.array([u.r_cvt for u in feeder.des_units])
        p_loss = (r_eq * relaxed.p_des ** 2 + r_cvt * relaxed.q_des ** 2) / state.v[:, d]
        state = replace(state, p_des=relaxed.p_des.copy(), q_des=relaxed.q_des.copy(), p_loss=p_loss)
    res = max_residual(eval_residuals(feeder, state))
    obj = evaluate_objective(feeder, state, objective) if objective is not None else float("nan")
    gap = obj - oov if (oov is not None and objective is not None) else None
    return state, RecoveryReport(objective=obj, gap=gap, max_residual=res,
                                 bound_violation=bound_violation(feeder, state))
