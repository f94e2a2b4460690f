"""Radial feeder data model, JSON ingestion and synthetic instance generation.

All electrical quantities are per-unit on one system base; voltages are
stored as squared magnitudes (pu^2).  Prices are $/MWh and ``dt`` is in
hours.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

# 0.9 / 1.1 / 1.0 pu voltage magnitude, squared
DEFAULT_V_MIN = 0.81
DEFAULT_V_MAX = 1.21
DEFAULT_V_NOM = 1.0
COUPLING_TOL = 1e-9


class FeederError(ValueError):
    """Malformed or invariant-violating feeder data."""


@dataclass(frozen=True)
class Bus:
    id: str
    v_min: float = DEFAULT_V_MIN
    v_max: float = DEFAULT_V_MAX
    v_nom: float = DEFAULT_V_NOM
    v_set: float | tuple[float, ...] = DEFAULT_V_NOM
    k_tx: float = 0.0
    is_substation: bool = False

    def __post_init__(self):
        if not 0 < self.v_min <= self.v_nom <= self.v_max:
            raise FeederError(f"bus {self.id}: need 0 < v_min <= v_nom <= v_max, got "
                              f"{self.v_min}, {self.v_nom}, {self.v_max}")
        if self.k_tx < 0:
            raise FeederError(f"bus {self.id}: k_tx must be nonnegative")

    def v_set_at(self, t: int) -> float:
        return self.v_set[t] if isinstance(self.v_set, tuple) else self.v_set


@dataclass(frozen=True)
class Branch:
    from_bus: str
    to_bus: str
    r: float
    x: float
    s_max: float
    l_max: float

    @property
    def name(self) -> str:
        return f"{self.from_bus}->{self.to_bus}"

    @property
    def z2(self) -> float:
        return self.r * self.r + self.x * self.x


@dataclass(frozen=True)
class DesUnit:
    """Battery + converter at one bus.  ``p > 0`` is discharge."""

    bus: str
    s_max: float
    r_batt: float
    r_cvt: float
    e_min: float
    e_max: float
    e_surplus: float

    def __post_init__(self):
        if self.r_batt <= 0 or self.r_cvt <= 0:
            raise FeederError(f"DES at bus {self.bus}: resistances must be positive")
        if self.s_max <= 0:
            raise FeederError(f"DES at bus {self.bus}: s_max must be positive")
        if not self.e_min <= self.e_surplus <= self.e_max:
            raise FeederError(f"DES at bus {self.bus}: need e_min <= e_surplus <= e_max")

    @property
    def r_eq(self) -> float:
        return self.r_batt + self.r_cvt


@dataclass(frozen=True)
class Profiles:
    """Per-period series.  Bus-keyed series omit buses with all-zero data."""

    horizon: int = 1
    dt: float = 1.0
    load_p: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    load_q: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    pv: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    price: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise FeederError("profiles: horizon must be >= 1")
        if self.dt <= 0:
            raise FeederError("profiles: dt must be positive")
        for name in ("load_p", "load_q", "pv"):
            for bus, series in getattr(self, name).items():
                if len(series) != self.horizon:
                    raise FeederError(f"profiles.{name}[{bus}]: length {len(series)} != horizon {self.horizon}")
        if any(v < 0 for s in self.pv.values() for v in s):
            raise FeederError("profiles.pv: PV output must be nonnegative")
        if self.price is not None and len(self.price) != self.horizon:
            raise FeederError(f"profiles.price: length {len(self.price)} != horizon {self.horizon}")


@dataclass(frozen=True)
class Feeder:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    des_units: tuple[DesUnit, ...] = ()
    profiles: Profiles = field(default_factory=Profiles)
    sub_rating: float = math.inf
    base_mva: float = 1.0
    base_kv: float = 1.0
    name: str = "feeder"
    meta: Mapping[str, Any] = field(default_factory=dict)

    # --- index helpers -----------------------------------------------------
    @property
    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def substation(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.is_substation)

    @property
    def horizon(self) -> int:
        return self.profiles.horizon

    def from_index(self) -> np.ndarray:
        idx = self.bus_index
        return np.array([idx[br.from_bus] for br in self.branches], dtype=int)

    def to_index(self) -> np.ndarray:
        idx = self.bus_index
        return np.array([idx[br.to_bus] for br in self.branches], dtype=int)

    def des_index(self) -> np.ndarray:
        idx = self.bus_index
        return np.array([idx[d.bus] for d in self.des_units], dtype=int)

    def _series(self, data: Mapping[str, Sequence[float]]) -> np.ndarray:
        out = np.zeros((self.horizon, len(self.buses)))
        idx = self.bus_index
        for bus, s in data.items():
            out[:, idx[bus]] = s
        return out

    def load_p(self) -> np.ndarray:
        """Active load, shape ``(horizon, n_bus)``."""
        return self._series(self.profiles.load_p)

    def load_q(self) -> np.ndarray:
        return self._series(self.profiles.load_q)

    def pv(self) -> np.ndarray:
        return self._series(self.profiles.pv)

    def k_tx(self) -> np.ndarray:
        return np.array([b.k_tx for b in self.buses])

    def children(self) -> list[list[int]]:
        """Downstream branch indices for every bus."""
        out: list[list[int]] = [[] for _ in self.buses]
        for j, f in enumerate(self.from_index()):
            out[f].append(j)
        return out

    def topo_order(self) -> list[int]:
        """Branch indices in breadth-first order from the substation."""
        kids = self.children()
        to = self.to_index()
        order, queue = [], deque([self.substation])
        while queue:
            i = queue.popleft()
            for j in kids[i]:
                order.append(j)
                queue.append(int(to[j]))
        return order

    def snapshot(self, period: int = 0) -> "Feeder":
        """Single-period copy taken at ``period``."""
        p = self.profiles

        def cut(m):
            return {k: (v[period],) for k, v in m.items()}

        prof = Profiles(horizon=1, dt=p.dt, load_p=cut(p.load_p), load_q=cut(p.load_q),
                        pv=cut(p.pv), price=None if p.price is None else (p.price[period],))
        buses = tuple(replace(b, v_set=b.v_set_at(period)) for b in self.buses)
        return replace(self, buses=buses, profiles=prof)


# ---------------------------------------------------------------------------
# validation


def validate_radial(feeder: Feeder) -> list[str]:
    """Topology violations; empty iff a spanning tree oriented away from the substation."""
    out: list[str] = []
    ids = [b.id for b in feeder.buses]
    idx = {b: i for i, b in enumerate(ids)}
    if len(idx) != len(ids):
        out.append("duplicate bus id")
    subs = [b.id for b in feeder.buses if b.is_substation]
    if len(subs) != 1:
        out.append(f"substation count: {len(subs)} (need exactly 1)")
    for br in feeder.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in idx:
                out.append(f"unknown bus: {end} on branch {br.from_bus}→{br.to_bus}")
    if out:
        return out
    if len(feeder.branches) != len(ids) - 1:
        out.append(f"not radial: {len(feeder.branches)} branches for {len(ids)} buses")

    adj: dict[str, list[tuple[str, Branch]]] = {b: [] for b in ids}
    for br in feeder.branches:
        adj[br.from_bus].append((br.to_bus, br))
        adj[br.to_bus].append((br.from_bus, br))
    root = subs[0]
    parent: dict[str, str | None] = {root: None}
    queue = deque([root])
    cyclic = False
    used: set[int] = set()
    while queue:
        u = queue.popleft()
        for w, br in adj[u]:
            if id(br) in used:
                continue
            used.add(id(br))
            if w in parent:
                cyclic = True
                continue
            parent[w] = u
            if br.from_bus != u:
                out.append(f"orientation: branch {br.from_bus}→{br.to_bus}")
            queue.append(w)
    if cyclic and not any(m.startswith("not radial") for m in out):
        out.append("not radial: cycle detected")
    for b in ids:
        if b not in parent:
            out.append(f"disconnected: bus {b}")
    return out


def check_feeder(feeder: Feeder) -> None:
    """Raise :class:`FeederError` on the first invariant violation."""
    problems = validate_radial(feeder)
    if problems:
        raise FeederError("; ".join(problems))
    vnom = {b.id: b.v_nom for b in feeder.buses}
    for br in feeder.branches:
        if br.r < 0 or br.x < 0 or br.z2 <= 0:
            raise FeederError(f"branch {br.name}: need r, x >= 0 and r^2 + x^2 > 0")
        if br.s_max <= 0 or br.l_max <= 0:
            raise FeederError(f"branch {br.name}: limits must be positive")
        if abs(br.s_max ** 2 - br.l_max * vnom[br.from_bus]) > COUPLING_TOL:
            raise FeederError(f"branch {br.name}: s_max^2 != l_max * v_nom (thermal/current coupling)")
    names = {b.id for b in feeder.buses}
    for d in feeder.des_units:
        if d.bus not in names:
            raise FeederError(f"DES at unknown bus {d.bus}")
    for key in ("load_p", "load_q", "pv"):
        for bus in getattr(feeder.profiles, key):
            if bus not in names:
                raise FeederError(f"profiles.{key}: unknown bus {bus}")
    for b in feeder.buses:
        if isinstance(b.v_set, tuple) and len(b.v_set) != feeder.horizon:
            raise FeederError(f"bus {b.id}: v_set length != horizon")
    if feeder.sub_rating <= 0:
        raise FeederError("sub_rating must be positive")


# ---------------------------------------------------------------------------
# JSON schema


def _req(d: Mapping, key: str, where: str):
    try:
        return d[key]
    except KeyError:
        raise FeederError(f"{where}: missing field {key!r}") from None


def feeder_from_dict(doc: Mapping[str, Any]) -> Feeder:
    try:
        base = doc.get("base", {})
        buses = []
        for k, b in enumerate(_req(doc, "buses", "feeder")):
            vs = b.get("v_set", DEFAULT_V_NOM if "v_nom" not in b else b["v_nom"])
            buses.append(Bus(
                id=str(_req(b, "id", f"buses[{k}]")),
                v_min=float(b.get("v_min", DEFAULT_V_MIN)),
                v_max=float(b.get("v_max", DEFAULT_V_MAX)),
                v_nom=float(b.get("v_nom", DEFAULT_V_NOM)),
                v_set=tuple(float(v) for v in vs) if isinstance(vs, list) else float(vs),
                k_tx=float(b.get("k_tx", 0.0)),
                is_substation=bool(b.get("is_substation", False)),
            ))
        meta = dict(doc.get("meta", {}))
        if "default_bounds" not in meta and any(
                k not in b for b in doc["buses"] for k in ("v_min", "v_max", "v_nom")):
            meta["default_bounds"] = True
        vnom = {b.id: b.v_nom for b in buses}
        branches = []
        for k, br in enumerate(_req(doc, "branches", "feeder")):
            where = f"branches[{k}]"
            fb, tb = str(_req(br, "from", where)), str(_req(br, "to", where))
            vn = vnom.get(fb, DEFAULT_V_NOM)
            s_max, l_max = br.get("s_max"), br.get("l_max")
            if s_max is None and l_max is None:
                raise FeederError(f"{where}: need s_max or l_max")
            if l_max is None:
                l_max = float(s_max) ** 2 / vn
            if s_max is None:
                s_max = math.sqrt(float(l_max) * vn)
            branches.append(Branch(fb, tb, float(_req(br, "r", where)), float(_req(br, "x", where)),
                                   float(s_max), float(l_max)))
        des = [DesUnit(bus=str(_req(d, "bus", f"des[{k}]")), s_max=float(_req(d, "s_max", f"des[{k}]")),
                       r_batt=float(_req(d, "r_batt", f"des[{k}]")),
                       r_cvt=float(_req(d, "r_cvt", f"des[{k}]")),
                       e_min=float(d.get("e_min", 0.0)), e_max=float(_req(d, "e_max", f"des[{k}]")),
                       e_surplus=float(d.get("e_surplus", d.get("e_min", 0.0))))
               for k, d in enumerate(doc.get("des", []))]
        p = doc.get("profiles", {})

        def series(m):
            return {str(k): tuple(float(v) for v in s) for k, s in (m or {}).items()}

        prof = Profiles(horizon=int(p.get("horizon", 1)), dt=float(p.get("dt", 1.0)),
                        load_p=series(p.get("load_p")), load_q=series(p.get("load_q")),
                        pv=series(p.get("pv")),
                        price=None if p.get("price") is None else tuple(float(v) for v in p["price"]))
        feeder = Feeder(buses=tuple(buses), branches=tuple(branches), des_units=tuple(des),
                        profiles=prof, sub_rating=float(base.get("sub_rating", math.inf)),
                        base_mva=float(base.get("mva", 1.0)), base_kv=float(base.get("kv", 1.0)),
                        name=str(doc.get("name", "feeder")), meta=meta)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FeederError):
            raise
        raise FeederError(f"parse error: {exc}") from exc
    check_feeder(feeder)
    return feeder


def _f(v: float):
    return v if math.isfinite(v) else None


def feeder_to_dict(feeder: Feeder) -> dict[str, Any]:
    p = feeder.profiles

    def series(m):
        return {k: list(m[k]) for k in sorted(m)}

    return {
        "name": feeder.name,
        "base": {"mva": feeder.base_mva, "kv": feeder.base_kv, "sub_rating": _f(feeder.sub_rating)},
        "buses": [{"id": b.id, "v_min": b.v_min, "v_max": b.v_max, "v_nom": b.v_nom,
                   "v_set": list(b.v_set) if isinstance(b.v_set, tuple) else b.v_set,
                   "k_tx": b.k_tx, "is_substation": b.is_substation} for b in feeder.buses],
        "branches": [{"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x,
                      "s_max": br.s_max, "l_max": br.l_max} for br in feeder.branches],
        "des": [{"bus": d.bus, "s_max": d.s_max, "r_batt": d.r_batt, "r_cvt": d.r_cvt,
                 "e_min": d.e_min, "e_max": d.e_max, "e_surplus": d.e_surplus}
                for d in feeder.des_units],
        "profiles": {"horizon": p.horizon, "dt": p.dt, "price": None if p.price is None else list(p.price),
                     "load_p": series(p.load_p), "load_q": series(p.load_q), "pv": series(p.pv)},
        "meta": dict(feeder.meta),
    }


def load_feeder(path: str | Path) -> Feeder:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FeederError(f"parse error: {path}: {exc}") from exc
    if "base" in doc and doc["base"].get("sub_rating") is None:
        doc["base"]["sub_rating"] = math.inf
    return feeder_from_dict(doc)


def dumps_feeder(feeder: Feeder) -> str:
    return json.dumps(feeder_to_dict(feeder), indent=2) + "\n"


def save_feeder(feeder: Feeder, path: str | Path) -> None:
    Path(path).write_text(dumps_feeder(feeder))


# ---------------------------------------------------------------------------
# synthetic instances


@dataclass(frozen=True)
class InstanceSpec:
    """Size and penetration parameters for :func:`gen_instance`.

    ``penetration`` is installed PV capacity over the peak of total load.
    ``n_pv``/``n_des`` default to roughly one site per ten / thirty buses.
    """

    n_buses: int
    penetration: float = 0.3
    horizon: int = 24
    n_pv: int | None = None
    n_des: int | None = None
    price: float | None = None  # flat price; None -> synthetic daily curve


# normalized daily shapes (hour 0..23)
_LOAD_SHAPE = np.array([0.55, 0.5, 0.48, 0.47, 0.48, 0.55, 0.65, 0.75, 0.8, 0.82, 0.85, 0.88,
                        0.9, 0.9, 0.88, 0.87, 0.9, 0.95, 1.0, 0.98, 0.92, 0.82, 0.7, 0.6])
_PRICE_SHAPE = np.array([28, 25, 23, 22, 23, 27, 33, 40, 45, 46, 47, 48,
                         47, 45, 44, 44, 47, 55, 62, 58, 50, 42, 36, 31], dtype=float)


def _daily(shape: np.ndarray, horizon: int) -> np.ndarray:
    x = np.linspace(0, 24, horizon, endpoint=False)
    return np.interp(x, np.arange(24), shape, period=24)


def _pv_shape(horizon: int) -> np.ndarray:
    hours = np.linspace(0, 24, horizon, endpoint=False) + 0.5 * 24 / horizon
    shape = np.clip(np.cos((hours - 12.5) / 7.0 * np.pi / 2), 0.0, None) ** 1.5
    return shape / shape.max()


def gen_instance(spec: InstanceSpec, seed: int) -> Feeder:
    """Deterministic synthetic radial feeder with PV and storage sized like common test feeders."""
    n = spec.n_buses
    if n < 2:
        raise FeederError("instance needs at least 2 buses")
    if not 0 <= spec.penetration <= 1:
        raise FeederError(f"penetration {spec.penetration} outside [0, 1]")
    rng = np.random.default_rng(seed)
    T = spec.horizon

    # random tree biased toward long laterals
    parent = [-1]
    depth = [0]
    for k in range(1, n):
        if k == 1:
            par = 0
        else:
            w = np.array(depth[:k], dtype=float) + 1.0
            par = int(rng.choice(k, p=w / w.sum()))
        parent.append(par)
        depth.append(depth[par] + 1)

    ids = [str(i + 1) for i in range(n)]
    peak_p = np.zeros(n)
    peak_p[1:] = rng.uniform(0.02, 0.08, n - 1) * (8.0 / max(n, 8)) ** 0.5
    pf_q = rng.uniform(0.2, 0.45, n)

    # downstream peak demand, for thermal sizing
    down = peak_p.copy()
    for k in range(n - 1, 0, -1):
        down[parent[k]] += down[k]
    total_peak = float(peak_p.sum())

    load_shape = _daily(_LOAD_SHAPE, T) if T > 1 else np.array([1.0])
    load_p_arr = np.zeros((T, n))
    for i in range(1, n):
        noise = 1.0 + 0.05 * rng.standard_normal(T) if T > 1 else np.ones(1)
        load_p_arr[:, i] = peak_p[i] * load_shape * noise
    load_q_arr = load_p_arr * pf_q
    system_peak = float(load_p_arr.sum(axis=1).max())

    n_pv = spec.n_pv if spec.n_pv is not None else (0 if spec.penetration == 0 else max(1, n // 10))
    n_pv = min(n_pv, n - 1)
    pv_sites = sorted(rng.choice(np.arange(1, n), size=n_pv, replace=False).tolist()) if n_pv else []
    pv_cap = np.zeros(n)
    if pv_sites and spec.penetration > 0:
        w = rng.uniform(0.6, 1.4, len(pv_sites))
        pv_cap[pv_sites] = spec.penetration * system_peak * w / w.sum()

    n_des = spec.n_des if spec.n_des is not None else max(1, n // 30)
    n_des = min(n_des, n - 1)
    des_sites = sorted(rng.choice(np.arange(1, n), size=n_des, replace=False).tolist()) if n_des else []

    down_pv = pv_cap.copy()  # reverse flow from PV in each subtree
    for k in range(n - 1, 0, -1):
        down_pv[parent[k]] += down_pv[k]

    # branch impedance scaled so the deepest bus stays inside the voltage band
    max_depth = max(depth)
    scale = 0.04 / max(max_depth, 1)
    branches = []
    for k in range(1, n):
        r = rng.uniform(0.5, 1.5) * scale
        x = r * rng.uniform(0.6, 1.6)
        s_max = 2.0 * (down[k] + down_pv[k]) + 0.1
        branches.append(Branch(ids[parent[k]], ids[k], float(r), float(x), float(s_max), float(s_max ** 2)))

    buses = tuple(Bus(id=ids[i], is_substation=(i == 0),
                      k_tx=float(rng.uniform(0.002, 0.006)) if i == 0 else 0.0)
                  for i in range(n))

    pv_shape = _pv_shape(T) if T > 1 else np.array([1.0])
    load_p = {ids[i]: tuple(float(v) for v in load_p_arr[:, i]) for i in range(1, n)}
    load_q = {ids[i]: tuple(float(v) for v in load_q_arr[:, i]) for i in range(1, n)}
    pv = {}
    for i in pv_sites:
        pv[ids[i]] = tuple(float(v) for v in pv_cap[i] * pv_shape)
    if spec.price is not None:
        price = (float(spec.price),) * T
    elif T == 1:
        price = (-30.0,)
    else:
        price = tuple(float(v) for v in _daily(_PRICE_SHAPE, T) * rng.uniform(0.9, 1.1))

    des = []
    for i in des_sites:
        s = float(rng.uniform(0.75, 1.25) * max(total_peak, 0.05) / (n_des + 1))
        e = float(s * rng.uniform(2.0, 3.5))
        des.append(DesUnit(bus=ids[i], s_max=s, r_batt=float(rng.uniform(0.01, 0.03)),
                           r_cvt=float(rng.uniform(0.01, 0.03)), e_min=0.1 * e, e_max=e,
                           e_surplus=0.5 * e))

    feeder = Feeder(buses=buses, branches=tuple(branches), des_units=tuple(des),
                    profiles=Profiles(horizon=T, dt=24.0 / T if T > 1 else 1.0, load_p=load_p,
                                      load_q=load_q, pv=pv, price=price),
                    sub_rating=float(2.0 * total_peak + 0.1), base_mva=1.0, base_kv=12.47,
                    name=f"synthetic-{n}bus-s{seed}",
                    meta={"seed": seed, "n_buses": n, "penetration": spec.penetration,
                          "horizon": T, "default_bounds": True})
    check_feeder(feeder)
    return feeder


def pv_penetration(feeder: Feeder) -> float:
    """Installed PV (peak of each PV series) over peak total load."""
    pv = feeder.pv().max(axis=0).sum() if feeder.profiles.pv else 0.0
    peak = feeder.load_p().sum(axis=1).max()
    return float(pv / peak) if peak > 0 else 0.0
