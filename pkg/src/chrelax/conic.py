"""Standard-form cone programs: modeling, canonicalization, solve, KKT re-check.

A :class:`ConicProblem` is::

    minimize    c @ x + offset
    subject to  a_eq @ x == b_eq
                a_ub @ x <= b_ub
                lb <= x <= ub
                x[cols_k] in K_k        for every cone block k

where each ``K_k`` is a second-order cone ``||x[1:]|| <= x[0]`` (``"soc"``)
or a rotated second-order cone ``2 x[0] x[1] >= ||x[2:]||**2``,
``x[0], x[1] >= 0`` (``"rsoc"``).  A column belongs to at most one cone
block; :class:`ProblemBuilder` introduces linked copies when a model
quantity has to enter several cones.

The numerical work is delegated to the Clarabel interior-point solver
(homogeneous embedding, sparse quasi-definite LDL, Ruiz equilibration).
Canonicalization, dual recovery and :func:`kkt_residuals` are done here so
solutions can be checked independently of the solver's own bookkeeping.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import clarabel
import numpy as np
import scipy.sparse as sp

SQRT1_2 = 1.0 / math.sqrt(2.0)

OPTIMAL = "optimal"
NEAR_OPTIMAL = "near_optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"
NUMERICAL_ERROR = "numerical_error"


class ConicError(ValueError):
    """Malformed cone program (dimension or cone-membership inconsistency)."""


@dataclass(frozen=True)
class ConeBlock:
    kind: str
    cols: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in ("soc", "rsoc"):
            raise ConicError(f"unknown cone kind {self.kind!r}")
        if len(self.cols) < (1 if self.kind == "soc" else 2):
            raise ConicError(f"{self.kind} block needs more members: {self.cols}")


@dataclass
class ConicProblem:
    c: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    a_ub: sp.csr_matrix
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    cones: list[ConeBlock] = field(default_factory=list)
    offset: float = 0.0
    eq_labels: list[str] | None = None
    ub_labels: list[str] | None = None
    col_names: list[str] | None = None

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def validate(self) -> None:
        n = self.n
        if self.a_eq.shape != (self.b_eq.shape[0], n):
            raise ConicError(f"a_eq shape {self.a_eq.shape} vs b_eq {self.b_eq.shape}, n={n}")
        if self.a_ub.shape != (self.b_ub.shape[0], n):
            raise ConicError(f"a_ub shape {self.a_ub.shape} vs b_ub {self.b_ub.shape}, n={n}")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ConicError("bound vectors must have length n")
        if np.any(self.lb > self.ub):
            j = int(np.argmax(self.lb > self.ub))
            raise ConicError(f"column {j}: lower bound {self.lb[j]} above upper bound {self.ub[j]}")
        seen: set[int] = set()
        for blk in self.cones:
            for j in blk.cols:
                if not 0 <= j < n:
                    raise ConicError(f"cone member {j} out of range")
                if j in seen:
                    raise ConicError(f"column {j} appears in more than one cone block")
                seen.add(j)
        for labels, m in ((self.eq_labels, self.b_eq.shape[0]), (self.ub_labels, self.b_ub.shape[0])):
            if labels is not None and len(labels) != m:
                raise ConicError("row label count does not match row count")

    def row_counts(self, kind: str = "eq") -> dict[str, int]:
        """Number of rows per label family (``"eq"`` or ``"ub"``)."""
        labels = self.eq_labels if kind == "eq" else self.ub_labels
        out: dict[str, int] = {}
        for lab in labels or []:
            out[lab] = out.get(lab, 0) + 1
        return out


# An affine expression: ({column: coefficient}, constant).
Affine = tuple[Mapping[int, float], float]


class ProblemBuilder:
    """Incremental assembly of a :class:`ConicProblem` with labelled rows."""

    def __init__(self):
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.names: list[str] = []
        self.c: dict[int, float] = {}
        self.offset = 0.0
        self._eq: list[tuple[dict[int, float], float, str]] = []
        self._ub: list[tuple[dict[int, float], float, str]] = []
        self._cones: list[ConeBlock] = []
        self._in_cone: set[int] = set()

    @property
    def n(self) -> int:
        return len(self.lb)

    def add_var(self, name: str, lb: float = -math.inf, ub: float = math.inf) -> int:
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.names.append(name)
        return len(self.lb) - 1

    def add_eq(self, coefs: Mapping[int, float], rhs: float, label: str) -> None:
        self._eq.append((dict(coefs), float(rhs), label))

    def add_le(self, coefs: Mapping[int, float], rhs: float, label: str) -> None:
        self._ub.append((dict(coefs), float(rhs), label))

    def add_objective(self, col: int, coef: float) -> None:
        self.c[col] = self.c.get(col, 0.0) + float(coef)

    def add_cone(self, kind: str, members: Sequence[Affine | int], label: str) -> ConeBlock:
        """Add a cone over affine expressions of existing columns.

        A member that is a bare column not yet owned by a cone is used
        directly; anything else gets a fresh column tied to the expression by
        an equality row labelled ``"link"``.
        """
        cols = []
        for k, m in enumerate(members):
            if isinstance(m, (int, np.integer)) and int(m) not in self._in_cone:
                cols.append(int(m))
                continue
            coefs, const = ({int(m): 1.0}, 0.0) if isinstance(m, (int, np.integer)) else m
            coefs = {j: v for j, v in coefs.items() if v != 0.0}
            if not coefs:
                aux = self.add_var(f"{label}.const{k}", const, const)
            else:
                aux = self.add_var(f"{label}.m{k}")
                row = {j: -v for j, v in coefs.items()}
                row[aux] = 1.0
                self.add_eq(row, const, "link")
            cols.append(aux)
        blk = ConeBlock(kind, tuple(cols))
        self._in_cone.update(cols)
        self._cones.append(blk)
        return blk

    @staticmethod
    def _matrix(rows, n):
        data, ri, ci = [], [], []
        for i, (coefs, _, _) in enumerate(rows):
            for j, v in coefs.items():
                ri.append(i)
                ci.append(j)
                data.append(v)
        return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))

    def build(self) -> ConicProblem:
        n = self.n
        c = np.zeros(n)
        for j, v in self.c.items():
            c[j] = v
        prob = ConicProblem(
            c=c,
            a_eq=self._matrix(self._eq, n),
            b_eq=np.array([r[1] for r in self._eq], dtype=float),
            a_ub=self._matrix(self._ub, n),
            b_ub=np.array([r[1] for r in self._ub], dtype=float),
            lb=np.array(self.lb, dtype=float),
            ub=np.array(self.ub, dtype=float),
            cones=list(self._cones),
            offset=self.offset,
            eq_labels=[r[2] for r in self._eq],
            ub_labels=[r[2] for r in self._ub],
            col_names=list(self.names),
        )
        prob.validate()
        return prob


# ---------------------------------------------------------------------------
# canonicalization


def rsoc_to_soc_matrix(dim: int) -> np.ndarray:
    """Orthogonal map taking a rotated-cone member vector to plain SOC order.

    ``(a, b, z) -> ((a + b)/sqrt2, (a - b)/sqrt2, z)``; the map is its own
    inverse.
    """
    m = np.eye(dim)
    m[:2, :2] = [[SQRT1_2, SQRT1_2], [SQRT1_2, -SQRT1_2]]
    return m


@dataclass
class StandardForm:
    """``A x + s = b`` with ``s`` in a product of zero, nonnegative and SOC cones."""

    A: sp.csc_matrix
    b: np.ndarray
    q: np.ndarray
    n_zero: int
    n_nonneg: int
    soc_dims: list[int]
    # bookkeeping for mapping duals back
    n_eq: int
    fixed_cols: np.ndarray
    n_ub: int
    upper_cols: np.ndarray
    lower_cols: np.ndarray
    cone_maps: list[np.ndarray]

    def clarabel_cones(self) -> list:
        cones = []
        if self.n_zero:
            cones.append(clarabel.ZeroConeT(self.n_zero))
        if self.n_nonneg:
            cones.append(clarabel.NonnegativeConeT(self.n_nonneg))
        cones.extend(clarabel.SecondOrderConeT(d) for d in self.soc_dims)
        return cones


def canonicalize(problem: ConicProblem) -> StandardForm:
    problem.validate()
    n = problem.n
    lb, ub = problem.lb, problem.ub
    fixed = np.flatnonzero(np.isfinite(lb) & (lb == ub))
    upper = np.flatnonzero(np.isfinite(ub) & ~(lb == ub))
    lower = np.flatnonzero(np.isfinite(lb) & ~(lb == ub))

    def sel(cols, sign=1.0):
        k = len(cols)
        return sp.csr_matrix((np.full(k, sign), (np.arange(k), cols)), shape=(k, n))

    blocks = [problem.a_eq, sel(fixed), problem.a_ub, sel(upper), sel(lower, -1.0)]
    rhs = [problem.b_eq, lb[fixed], problem.b_ub, ub[upper], -lb[lower]]
    maps = []
    soc_dims = []
    for blk in problem.cones:
        d = len(blk.cols)
        m = rsoc_to_soc_matrix(d) if blk.kind == "rsoc" else np.eye(d)
        e = sel(np.asarray(blk.cols))
        blocks.append(-sp.csr_matrix(m) @ e)
        rhs.append(np.zeros(d))
        maps.append(m)
        soc_dims.append(d)
    A = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, n))
    return StandardForm(
        A=A,
        b=np.concatenate(rhs),
        q=problem.c.astype(float).copy(),
        n_zero=problem.b_eq.shape[0] + len(fixed),
        n_nonneg=problem.b_ub.shape[0] + len(upper) + len(lower),
        soc_dims=soc_dims,
        n_eq=problem.b_eq.shape[0],
        fixed_cols=fixed,
        n_ub=problem.b_ub.shape[0],
        upper_cols=upper,
        lower_cols=lower,
        cone_maps=maps,
    )


# ---------------------------------------------------------------------------
# solve


@dataclass
class SolverSettings:
    tol: float = 1e-8
    max_iter: int = 200
    verbose: bool = False
    equilibrate: bool = True


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    y_eq: np.ndarray
    y_ub: np.ndarray
    z_lb: np.ndarray
    z_ub: np.ndarray
    z_cone: list[np.ndarray]
    objective: float
    iterations: int
    solve_time: float
    solver_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, NEAR_OPTIMAL)


_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": NEAR_OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
    "MaxIterations": ITERATION_LIMIT,
    "MaxTime": ITERATION_LIMIT,
}


def solve(problem: ConicProblem, settings: SolverSettings | None = None) -> ConicSolution:
    """Solve ``problem``; infeasible/unbounded outcomes are reported by status."""
    settings = settings or SolverSettings()
    std = canonicalize(problem)
    n = problem.n
    opts = clarabel.DefaultSettings()
    opts.verbose = settings.verbose
    opts.max_iter = settings.max_iter
    opts.tol_gap_abs = settings.tol
    opts.tol_gap_rel = settings.tol
    opts.tol_feas = settings.tol
    opts.tol_ktratio = min(1e-6, settings.tol * 100)
    opts.equilibrate_enable = settings.equilibrate
    opts.presolve_enable = False
    opts.max_threads = 1

    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), std.q, std.A, std.b,
                                    std.clarabel_cones(), opts)
    res = solver.solve()
    elapsed = time.perf_counter() - t0

    raw = str(res.status)
    status = _STATUS.get(raw, NUMERICAL_ERROR)
    x = np.asarray(res.x, dtype=float)
    z = np.asarray(res.z, dtype=float)
    if status not in (OPTIMAL, NEAR_OPTIMAL, ITERATION_LIMIT):
        x = np.full(n, np.nan)

    # split the stacked dual back into the original constraint families
    k = 0
    y_eq = z[k:k + std.n_eq]; k += std.n_eq
    z_fix = z[k:k + len(std.fixed_cols)]; k += len(std.fixed_cols)
    y_ub = z[k:k + std.n_ub]; k += std.n_ub
    z_ub = np.zeros(n)
    z_lb = np.zeros(n)
    z_ub[std.upper_cols] = z[k:k + len(std.upper_cols)]; k += len(std.upper_cols)
    z_lb[std.lower_cols] = z[k:k + len(std.lower_cols)]; k += len(std.lower_cols)
    z_ub[std.fixed_cols] = np.maximum(z_fix, 0.0)
    z_lb[std.fixed_cols] = np.maximum(-z_fix, 0.0)
    z_cone = []
    for m in std.cone_maps:
        d = m.shape[0]
        z_cone.append(m.T @ z[k:k + d])
        k += d

    obj = float(problem.c @ x + problem.offset) if np.all(np.isfinite(x)) else math.nan
    return ConicSolution(status=status, x=x, y_eq=y_eq.copy(), y_ub=y_ub.copy(), z_lb=z_lb,
                         z_ub=z_ub, z_cone=z_cone, objective=obj,
                         iterations=int(res.iterations), solve_time=elapsed,
                         solver_status=raw)


# ---------------------------------------------------------------------------
# independent optimality check


@dataclass(frozen=True)
class KKTResiduals:
    primal: float
    dual: float
    gap: float

    def max(self) -> float:
        return max(self.primal, self.dual, self.gap)


def _soc_violation(u: np.ndarray) -> float:
    return max(0.0, float(np.linalg.norm(u[1:]) - u[0])) if u.size else 0.0


def cone_violation(kind: str, u: np.ndarray) -> float:
    """Euclidean-ish distance proxy of ``u`` from the cone (0 when inside)."""
    u = np.asarray(u, dtype=float)
    if kind == "rsoc":
        u = rsoc_to_soc_matrix(u.size) @ u
    return _soc_violation(u)


def kkt_residuals(problem: ConicProblem, sol: ConicSolution) -> KKTResiduals:
    """Relative primal infeasibility, dual infeasibility and duality gap.

    Recomputed from the original problem data; nothing is taken from the
    solver except the primal/dual vectors.
    """
    x = sol.x
    lb, ub = problem.lb, problem.ub
    fin_lb, fin_ub = np.isfinite(lb), np.isfinite(ub)

    r_p = [np.abs(problem.a_eq @ x - problem.b_eq),
           np.maximum(problem.a_ub @ x - problem.b_ub, 0.0),
           np.maximum(lb[fin_lb] - x[fin_lb], 0.0),
           np.maximum(x[fin_ub] - ub[fin_ub], 0.0),
           np.array([cone_violation(b.kind, x[list(b.cols)]) for b in problem.cones])]
    scale_p = 1.0 + max([np.max(np.abs(v), initial=0.0) for v in
                         (problem.b_eq, problem.b_ub, lb[fin_lb], ub[fin_ub])])
    primal = max(float(np.max(v, initial=0.0)) for v in r_p) / scale_p

    stat = problem.c + problem.a_eq.T @ sol.y_eq + problem.a_ub.T @ sol.y_ub - sol.z_lb + sol.z_ub
    for blk, s in zip(problem.cones, sol.z_cone):
        stat[list(blk.cols)] -= s
    r_d = [np.abs(stat), np.maximum(-sol.y_ub, 0.0), np.maximum(-sol.z_lb, 0.0),
           np.maximum(-sol.z_ub, 0.0), np.abs(sol.z_lb[~fin_lb]), np.abs(sol.z_ub[~fin_ub]),
           np.array([cone_violation(b.kind, s) for b, s in zip(problem.cones, sol.z_cone)])]
    dual = max(float(np.max(v, initial=0.0)) for v in r_d) / (1.0 + np.max(np.abs(problem.c), initial=0.0))

    pobj = float(problem.c @ x)
    dobj = float(-problem.b_eq @ sol.y_eq - problem.b_ub @ sol.y_ub
                 + lb[fin_lb] @ sol.z_lb[fin_lb] - ub[fin_ub] @ sol.z_ub[fin_ub])
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return KKTResiduals(primal=float(primal), dual=float(dual), gap=float(gap))


# ---------------------------------------------------------------------------
# text dump


def _sparse_rows(a: sp.csr_matrix) -> list[list]:
    a = a.tocoo()
    return [[int(i), int(j), float(v)] for i, j, v in sorted(zip(a.row, a.col, a.data))]


def _num(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def dump_problem(problem: ConicProblem) -> str:
    """Serialize a cone program to JSON text (stable key and entry order)."""
    doc = {
        "n": problem.n,
        "objective": {"c": [float(v) for v in problem.c], "offset": problem.offset},
        "columns": [{"name": nm, "lb": _num(lo), "ub": _num(hi)} for nm, lo, hi in
                    zip(problem.col_names or [""] * problem.n, problem.lb, problem.ub)],
        "eq": {"rows": _sparse_rows(problem.a_eq), "rhs": problem.b_eq.tolist(),
               "labels": problem.eq_labels},
        "ub": {"rows": _sparse_rows(problem.a_ub), "rhs": problem.b_ub.tolist(),
               "labels": problem.ub_labels},
        "cones": [{"kind": b.kind, "cols": list(b.cols)} for b in problem.cones],
    }
    return json.dumps(doc, indent=1)


def load_problem(text: str) -> ConicProblem:
    doc = json.loads(text)
    n = doc["n"]

    def mat(rows, m):
        if not rows:
            return sp.csr_matrix((m, n))
        i, j, v = zip(*rows)
        return sp.csr_matrix((v, (i, j)), shape=(m, n))

    b_eq = np.array(doc["eq"]["rhs"], dtype=float)
    b_ub = np.array(doc["ub"]["rhs"], dtype=float)
    prob = ConicProblem(
        c=np.array(doc["objective"]["c"], dtype=float),
        a_eq=mat(doc["eq"]["rows"], b_eq.size),
        b_eq=b_eq,
        a_ub=mat(doc["ub"]["rows"], b_ub.size),
        b_ub=b_ub,
        lb=np.array([float(col["lb"]) for col in doc["columns"]]),
        ub=np.array([float(col["ub"]) for col in doc["columns"]]),
        cones=[ConeBlock(b["kind"], tuple(b["cols"])) for b in doc["cones"]],
        offset=float(doc["objective"]["offset"]),
        eq_labels=doc["eq"]["labels"],
        ub_labels=doc["ub"]["labels"],
        col_names=[col["name"] for col in doc["columns"]],
    )
    prob.validate()
    return prob
