"""Convex hulls of the branch equation ``v*l = P**2 + Q**2`` and the storage loss equation.

Points are 4-vectors: ``(P, Q, l, v)`` for a branch, ``(p, q, p_loss, v)``
for a storage unit.  The branch hull inside the bound box is the rotated
cone ``P**2 + Q**2 <= l*v`` plus one linear cut through the two corner
loci ``(l_max, v_nom)`` and ``(s_max**2/v_max, v_max)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import conic
from .feeder import Branch, Bus, DesUnit

TOL = 1e-9


@dataclass(frozen=True)
class BranchHull:
    v_min: float
    v_max: float
    v_nom: float
    s_max: float
    l_max: float

    @classmethod
    def from_bounds(cls, v_min=0.81, v_max=1.21, v_nom=1.0, s_max=1.0) -> "BranchHull":
        return cls(v_min, v_max, v_nom, s_max, s_max * s_max / v_nom)

    @property
    def cut_coef(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.v_max, self.l_max])

    @property
    def cut_rhs(self) -> float:
        return self.l_max * (self.v_max + self.v_nom)

    @property
    def anchors_lv(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """The two ``(l, v)`` corners the cut passes through."""
        return (self.l_max, self.v_nom), (self.s_max ** 2 / self.v_max, self.v_max)

    def cone_value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x[..., 0] ** 2 + x[..., 1] ** 2 - x[..., 2] * x[..., 3]

    def cut_value(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.cut_coef - self.cut_rhs


def make_branch_hull(branch: Branch, sending_bus: Bus, tol: float = 1e-9) -> BranchHull:
    if abs(branch.s_max ** 2 - branch.l_max * sending_bus.v_nom) > tol:
        raise ValueError(f"branch {branch.name}: s_max^2 != l_max * v_nom")
    return BranchHull(sending_bus.v_min, sending_bus.v_max, sending_bus.v_nom,
                      branch.s_max, branch.l_max)


@dataclass(frozen=True)
class DesHull:
    """Cone plus two cuts valid on the storage loss set.

    * C1 ``r_eq p**2 + r_cvt q**2 <= p_loss v``
    * C2 ``r_batt q**2 + v_min p_loss <= r_eq s_max**2``
    * C3 ``v_min v_max p_loss + r_eq s_max**2 v <= r_eq s_max**2 (v_min + v_max)``
    """

    r_batt: float
    r_cvt: float
    s_max: float
    v_min: float
    v_max: float

    @property
    def r_eq(self) -> float:
        return self.r_batt + self.r_cvt

    @property
    def e(self) -> float:
        return self.r_eq * self.s_max ** 2

    @property
    def chord_coef(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.v_min * self.v_max, self.e])

    @property
    def chord_rhs(self) -> float:
        return self.e * (self.v_min + self.v_max)

    @property
    def p_loss_max(self) -> float:
        return self.e / self.v_min

    def c1(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.r_eq * y[..., 0] ** 2 + self.r_cvt * y[..., 1] ** 2 - y[..., 2] * y[..., 3]

    def c2(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.r_batt * y[..., 1] ** 2 + self.v_min * y[..., 2] - self.e

    def c3(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.chord_coef - self.chord_rhs


def make_des_hull(unit: DesUnit, bus: Bus) -> DesHull:
    if unit.r_batt <= 0 or unit.r_cvt <= 0:
        raise ValueError("storage resistances must be positive")
    if bus.v_min <= 0:
        raise ValueError("v_min must be positive")
    return DesHull(unit.r_batt, unit.r_cvt, unit.s_max, bus.v_min, bus.v_max)


@dataclass(frozen=True)
class Membership:
    inside: bool
    violated: tuple[str, ...]

    def __bool__(self):
        return self.inside


def membership(hull: BranchHull | DesHull, point, *, cuts: bool = True, tol: float = TOL) -> Membership:
    """Test a 4-vector against the hull (or, with ``cuts=False``, the cone relaxation only)."""
    x = np.asarray(point, dtype=float)
    if x.shape != (4,):
        raise ValueError("point must be a 4-vector")
    if isinstance(hull, BranchHull):
        P, Q, ell, v = x
        checks = {
            "cone": hull.cone_value(x),
            "l_lower": -ell,
            "l_upper": ell - hull.l_max,
            "v_lower": hull.v_min - v,
            "v_upper": v - hull.v_max,
            "thermal": P * P + Q * Q - hull.s_max ** 2,
        }
        if cuts:
            checks["cut"] = hull.cut_value(x)
    else:
        p, q, ploss, v = x
        checks = {
            "cone": hull.c1(x),
            "converter": p * p + q * q - hull.s_max ** 2,
            "v_lower": hull.v_min - v,
            "v_upper": v - hull.v_max,
            "p_loss_lower": -ploss,
        }
        if cuts:
            checks["asymmetry_cut"] = hull.c2(x)
            checks["chord_cut"] = hull.c3(x)
    bad = tuple(k for k, val in checks.items() if val > tol)
    return Membership(not bad, bad)


# ---------------------------------------------------------------------------
# Caratheodory witness on the cut facet


@dataclass(frozen=True)
class Decomposition:
    gamma: np.ndarray          # (4,)
    pq_anchors: np.ndarray     # (2, 2): the two (P, Q) points on the thermal circle
    anchors: np.ndarray        # (4, 4): rows are the 4-vector anchors

    def reconstruct(self) -> np.ndarray:
        return self.gamma @ self.anchors


def decompose(hull: BranchHull, point, tol: float = TOL) -> Decomposition:
    """Write a point of the cut facet as a convex combination of four points of the branch set.

    The ``(P, Q)`` anchors are the endpoints of the chord of the thermal
    circle whose midpoint is ``(P, Q)``; the ``(l, v)`` weight comes from the
    point's position along the facet segment.
    """
    x = np.asarray(point, dtype=float)
    P, Q, ell, v = x
    if abs(hull.cut_value(x)) > tol:
        raise ValueError(f"point not on the cut facet (residual {hull.cut_value(x):.3e})")
    rho2 = P * P + Q * Q
    s2 = hull.s_max ** 2
    if rho2 > s2 + tol or not (hull.v_nom - tol <= v <= hull.v_max + tol) or ell < -tol:
        raise ValueError("point outside the bound box")

    rho = math.sqrt(rho2)
    if rho == 0.0:
        d = np.array([1.0, 0.0])
        half = hull.s_max
    else:
        d = np.array([-Q, P]) / rho
        half = math.sqrt(max(s2 - rho2, 0.0))
    c = np.array([P, Q])
    pq = np.array([c + half * d, c - half * d])
    # renormalize onto the circle to kill rounding
    pq *= hull.s_max / np.linalg.norm(pq, axis=1)[:, None]

    (l_a, v_a), (l_b, v_b) = hull.anchors_lv
    if v_b - v_a > 0:
        g13 = (v_b - v) / (v_b - v_a)
    else:
        g13 = 1.0
    g13 = min(max(g13, 0.0), 1.0)
    gamma = np.array([g13 / 2, (1 - g13) / 2, g13 / 2, (1 - g13) / 2])
    anchors = np.array([
        [pq[0, 0], pq[0, 1], l_a, v_a],
        [pq[0, 0], pq[0, 1], l_b, v_b],
        [pq[1, 0], pq[1, 1], l_a, v_a],
        [pq[1, 0], pq[1, 1], l_b, v_b],
    ])
    return Decomposition(gamma=gamma, pq_anchors=pq, anchors=anchors)


def sample_facet(hull: BranchHull, n: int, seed: int) -> np.ndarray:
    """Uniform-ish points of the cut facet with ``P**2 + Q**2 <= s_max**2``."""
    rng = np.random.default_rng(seed)
    (l_a, v_a), (l_b, v_b) = hull.anchors_lv
    g = rng.random(n)
    r = hull.s_max * np.sqrt(rng.random(n))
    th = 2 * np.pi * rng.random(n)
    return np.c_[r * np.cos(th), r * np.sin(th), g * l_a + (1 - g) * l_b, g * v_a + (1 - g) * v_b]


# ---------------------------------------------------------------------------
# three-dimensional projections


def projection_predicates(hull: BranchHull, point, tol: float = TOL) -> dict[str, bool]:
    """Membership in the hulls of the four 3-D coordinate projections.

    ``PQl``: ``P**2+Q**2 <= v_max*l``, ``l <= l_max``; ``PQv``:
    ``P**2+Q**2 <= l_max*v``, ``v`` in range; ``Plv``/``Qlv``: the cone
    with one flow dropped, plus the cut.
    """
    P, Q, ell, v = np.asarray(point, dtype=float)
    cut = hull.v_max * ell + hull.l_max * v - hull.cut_rhs <= tol
    return {
        "PQl": bool(P * P + Q * Q - hull.v_max * ell <= tol and ell <= hull.l_max + tol),
        "PQv": bool(P * P + Q * Q - hull.l_max * v <= tol and hull.v_min - tol <= v <= hull.v_max + tol),
        "Plv": bool(P * P - ell * v <= tol and cut),
        "Qlv": bool(Q * Q - ell * v <= tol and cut),
    }


# ---------------------------------------------------------------------------
# sampling oracles


def sample_omega0(hull: BranchHull, n: int, seed: int) -> np.ndarray:
    """``n`` points of the exact branch set inside the bound box.

    ``(P, Q)`` uniform on the thermal disk, ``v`` uniform on its range,
    ``l = (P**2+Q**2)/v``; draws with ``l > l_max`` are rejected.
    """
    rng = np.random.default_rng(seed)
    if n <= 0:
        return np.zeros((0, 4))
    chunks, have = [], 0
    while have < n:
        m = max(2 * (n - have), 64)
        r = hull.s_max * np.sqrt(rng.random(m))
        th = 2 * np.pi * rng.random(m)
        v = hull.v_min + (hull.v_max - hull.v_min) * rng.random(m)
        P, Q = r * np.cos(th), r * np.sin(th)
        ell = (P * P + Q * Q) / v
        keep = ell <= hull.l_max
        chunk = np.c_[P, Q, ell, v][keep]
        chunks.append(chunk)
        have += len(chunk)
    return np.vstack(chunks)[:n]


def sample_des_set(hull: DesHull, n: int, seed: int) -> np.ndarray:
    """``n`` points on the storage loss surface with the converter and voltage limits."""
    rng = np.random.default_rng(seed)
    r = hull.s_max * np.sqrt(rng.random(n))
    th = 2 * np.pi * rng.random(n)
    v = hull.v_min + (hull.v_max - hull.v_min) * rng.random(n)
    p, q = r * np.cos(th), r * np.sin(th)
    ploss = (hull.r_eq * p * p + hull.r_cvt * q * q) / v
    return np.c_[p, q, ploss, v]


def hull_problem(hull: BranchHull, direction, *, cuts: bool = True) -> conic.ConicProblem:
    """``min direction @ x`` over the branch hull (or the cone relaxation)."""
    b = conic.ProblemBuilder()
    P = b.add_var("P")
    Q = b.add_var("Q")
    ell = b.add_var("l", 0.0, hull.l_max)
    v = b.add_var("v", hull.v_min, hull.v_max)
    for col, a in zip((P, Q, ell, v), direction):
        b.add_objective(col, float(a))
    b.add_cone("rsoc", [ell, ({v: 0.5}, 0.0), P, Q], "branch_cone")
    b.add_cone("soc", [({}, hull.s_max), P, Q], "thermal")
    if cuts:
        b.add_le({ell: hull.v_max, v: hull.l_max}, hull.cut_rhs, "branch_cut")
    return b.build()


def support_value(hull: BranchHull, direction, settings: conic.SolverSettings | None = None) -> float:
    """Minimum of ``direction @ x`` over the hull, by conic solve."""
    prob = hull_problem(hull, direction)
    sol = conic.solve(prob, settings or conic.SolverSettings(tol=1e-10))
    if not sol.ok:
        raise RuntimeError(f"support solve failed: {sol.status}")
    return sol.objective


def support_gap(hull: BranchHull, direction, samples: np.ndarray,
                settings: conic.SolverSettings | None = None) -> float:
    """Hull support minus sample support along ``direction`` (<= 0 for a valid relaxation)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("need at least one sample")
    d = np.asarray(direction, dtype=float)
    return support_value(hull, d, settings) - float((samples @ d).min())


def random_directions(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 4))
    return d / np.linalg.norm(d, axis=1, keepdims=True)
