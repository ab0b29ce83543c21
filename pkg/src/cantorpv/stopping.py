"""Nested stopping-time families for the (relative) martingale in the plane.

Family ``F_1`` collects the first cubes along each branch with
``|S_Q| > M b_0``.  For ``Q`` in ``F_{g-1}`` the family ``F_g(Q)`` collects the
first sub-cubes with ``|S_{Q,R}| > M b_{(g-1)M}`` and keeps a subset selected
by direction.

Stopping is decided on canonical orbit representatives under the dihedral
group acting on the digits below ``Q``.  The relative martingale is
equivariant (``S_{Q,gR} = eps_g g S_{Q,R}``), so the stopped set is a union
of orbits by construction, and it depends only on ``gen(Q)`` and the
threshold.

A stopped ``R`` is kept when the transported proxy ``S_Q + S_{Q,R}`` lies in
``sigma(S_Q, 120 deg)``, i.e. when ``S_{Q,R}`` points into the 120 degree cone
around ``-S_Q``.  That cone contains an expanded octant and the twisted action
``v -> eps_g g v`` is transitive on octants, so every orbit keeps at least one
member: kept mass is at least one eighth of stopped mass for each parent.
Whether the true ``S_R`` passes the sector test is recorded per node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .cantor import CantorConfig, CantorError, envelope_seq, point_address
from .geometry import SECTOR_120, in_sector, octant_in_sector, sector, symmetry_group, kernel_sign
from .kernels import KernelSpec
from .martingale import Evaluator, DEFAULT_TOL

STRICT, EXPLORATORY = "strict", "exploratory"


class ParentValueMissing(CantorError):
    pass


class PathNotInForest(CantorError):
    pass


class NeitherHolds(CantorError):
    pass


@dataclass(frozen=True)
class StoppingParams:
    M: float
    C_emp: float
    max_depth: int
    mode: str = STRICT

    def __post_init__(self):
        if self.mode not in (STRICT, EXPLORATORY):
            raise ValueError(f"mode must be {STRICT!r} or {EXPLORATORY!r}")
        if self.mode == STRICT:
            if not self.M - 1 > 1 / math.sin(math.radians(15)):
                raise ValueError("strict mode needs M - 1 > 1/sin 15deg (M > 4.8637)")
            if self.M < 5:
                raise ValueError("strict mode needs M >= 5")
        elif self.M < 1:
            raise ValueError("M must be >= 1")
        if not self.C_emp > 0:
            raise ValueError("C_emp must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    @property
    def conforming(self) -> bool:
        return self.mode == STRICT

    def to_json(self) -> dict:
        return {"M": self.M, "C_emp": self.C_emp, "max_depth": self.max_depth,
                "mode": self.mode, "conforming": self.conforming}


@dataclass
class Node:
    address: tuple
    family: int
    parent: tuple | None
    S: np.ndarray
    S_err: float
    S_rel: np.ndarray
    rel_err: float
    threshold: float
    b: float
    proxy_pass: bool
    sector_pass: bool
    alternative: str = ""

    @property
    def generation(self) -> int:
        return len(self.address)

    def to_json(self) -> dict:
        return {"address": list(self.address), "family": self.family,
                "parent": None if self.parent is None else list(self.parent),
                "generation": self.generation,
                "S": [float(v) for v in self.S], "S_err": self.S_err,
                "S_rel": [float(v) for v in self.S_rel], "rel_err": self.rel_err,
                "threshold": self.threshold, "b": self.b,
                "proxy_pass": self.proxy_pass, "sector_pass": self.sector_pass,
                "alternative": self.alternative}


@dataclass
class ParentRecord:
    """Mass bookkeeping for one parent; all masses are exact dyadic rationals."""

    parent: tuple
    family: int           # family index of the children
    threshold: float
    octant: int | None
    stopped_mass: Fraction = Fraction(0)
    kept_mass: Fraction = Fraction(0)
    undecided_mass: Fraction = Fraction(0)
    orbits: int = 0
    min_orbit_share: Fraction | None = None

    @property
    def coverage(self) -> Fraction | None:
        """Kept mass over stopped mass (None when nothing stopped)."""
        return self.kept_mass / self.stopped_mass if self.stopped_mass else None

    def to_json(self) -> dict:
        cov = self.coverage
        return {"parent": list(self.parent), "family": self.family,
                "threshold": self.threshold, "octant": self.octant,
                "stopped_mass": str(self.stopped_mass), "kept_mass": str(self.kept_mass),
                "undecided_mass": str(self.undecided_mass),
                "coverage": None if cov is None else str(cov),
                "orbits": self.orbits,
                "min_orbit_share": None if self.min_orbit_share is None
                else str(self.min_orbit_share)}


@dataclass
class StoppingForest:
    config: CantorConfig
    kernel: KernelSpec
    params: StoppingParams
    b: tuple
    families: list = field(default_factory=list)    # families[g-1] = list of Node
    parents: list = field(default_factory=list)     # ParentRecord per expanded parent

    def nodes(self):
        for fam in self.families:
            yield from fam

    def node(self, address) -> Node:
        address = tuple(address)
        for n in self.nodes():
            if n.address == address:
                return n
        raise KeyError(address)

    def record(self, parent, family) -> ParentRecord:
        for r in self.parents:
            if r.parent == tuple(parent) and r.family == family:
                return r
        raise KeyError(parent)

    def to_json(self) -> dict:
        return {"config": self.config.to_json(), "kernel": self.kernel.label,
                "params": self.params.to_json(), "b": list(self.b),
                "families": [[n.to_json() for n in fam] for fam in self.families],
                "parents": [r.to_json() for r in self.parents],
                "undecided_mass": [str(sum((r.undecided_mass for r in self.parents
                                            if r.family == g + 1), Fraction(0)))
                                   for g in range(len(self.families))]}


# --------------------------------------------------------------------------
# orbit bookkeeping on relative addresses

class _Orbits:
    def __init__(self, kernel: KernelSpec):
        self.group = [(g, kernel_sign(kernel, g)) for g, _ in symmetry_group(2)]

    def canonical(self, rel: tuple):
        """``(rep, g, eps)`` with ``g(rel) = rep``; rep is the least image."""
        best = None
        for g, eps in self.group:
            img = g.act_on_address(rel)
            if best is None or img < best[0]:
                best = (img, g, eps)
        return best

    def members(self, rel: tuple):
        """Distinct images of ``rel`` with ``(g, eps)`` mapping rel onto each."""
        out = {}
        for g, eps in self.group:
            out.setdefault(g.act_on_address(rel), (g, eps))
        return out


def _transported(value: np.ndarray, g, eps: int) -> np.ndarray:
    return eps * g.apply(value)


def _inverse_transport(value: np.ndarray, g, eps: int) -> np.ndarray:
    # v = eps g(u)  =>  u = eps g^T(v)
    return eps * (g.matrix().T @ value)


# --------------------------------------------------------------------------
# construction

def _threshold(params: StoppingParams, b: Sequence[float], family: int) -> tuple[float, float]:
    idx = 0 if family == 1 else min((family - 1) * int(math.ceil(params.M)), len(b) - 1)
    return params.M * b[idx], b[idx]


@dataclass
class _Search:
    """Stopped sub-cubes below a generation-m cube, in relative digits."""

    rels: list            # stopped relative addresses, grouped by orbit
    values: np.ndarray    # S_{Q,R} for each (transported from the orbit rep)
    errors: np.ndarray
    orbit: np.ndarray     # orbit id of each entry
    orbit_size: np.ndarray
    depth: np.ndarray     # len(rel)
    undecided: Fraction   # fraction of mu(Q) never stopped by max_depth


class _Builder:
    def __init__(self, forest: StoppingForest, ev: Evaluator):
        self.forest = forest
        self.ev = ev
        self.orbits = _Orbits(forest.kernel)
        self._searches: dict = {}

    def search(self, m: int, threshold: float) -> _Search:
        key = (m, threshold)
        if key not in self._searches:
            self._searches[key] = self._search(m, threshold)
        return self._searches[key]

    def _search(self, m: int, threshold: float) -> _Search:
        """Level-synchronous first-hit search; only orbit representatives are evaluated."""
        Q = (0,) * m
        stops = {}
        live = [()]
        for gen in range(m + 1, self.forest.params.max_depth + 1):
            cands = [rel + (b,) for rel in live for b in range(4)]
            canon = [self.orbits.canonical(rel) for rel in cands]
            reps = sorted({c[0] for c in canon})
            vals = dict(zip(reps, self.ev.relative_many([(Q, Q + r) for r in reps])))
            live = []
            for rel, (rep, g, eps) in zip(cands, canon):
                v = vals[rep]
                if float(np.linalg.norm(v.value)) > threshold:
                    stops[rel] = (rep, _inverse_transport(v.value, g, eps), v.error)
                else:
                    live.append(rel)
            if not live:
                break
        depth_left = self.forest.params.max_depth - m
        undecided = Fraction(len(live), 4 ** depth_left) if live else Fraction(0)
        order = sorted(stops, key=lambda r: (stops[r][0], r))
        rep_ids = {}
        orbit = np.array([rep_ids.setdefault(stops[r][0], len(rep_ids)) for r in order],
                         dtype=np.int64)
        return _Search(order,
                       np.array([stops[r][1] for r in order]).reshape(-1, 2),
                       np.array([stops[r][2] for r in order]),
                       orbit, np.bincount(orbit, minlength=len(rep_ids)),
                       np.array([len(r) for r in order], dtype=np.int64), undecided)

    def expand(self, Q: tuple, family: int, S_Q: np.ndarray | None) -> list:
        """Stop, filter and book-keep one parent; returns unfinished nodes (no S_R yet)."""
        params = self.forest.params
        threshold, b = _threshold(params, self.forest.b, family)
        found = self.search(len(Q), threshold)
        octant = None
        if family == 1:
            keep = np.ones(len(found.rels), dtype=bool)
        else:
            if S_Q is None or not np.any(S_Q):
                raise ParentValueMissing(f"no nonzero S value for parent {Q}")
            sec = sector(S_Q, SECTOR_120)
            octant = octant_in_sector(sec)
            V = found.values
            keep = V @ sec.axis >= (math.cos(SECTOR_120 / 2) - 1e-12) * np.linalg.norm(V, axis=1)
        m = len(Q)
        rec = ParentRecord(Q, family, threshold, octant, undecided_mass=found.undecided)
        rec.stopped_mass = _mass(found.depth, m)
        rec.kept_mass = _mass(found.depth[keep], m)
        rec.orbits = len(found.orbit_size)
        if rec.orbits:
            kept_per = np.bincount(found.orbit[keep], minlength=rec.orbits)
            i = int(np.argmin(kept_per / found.orbit_size))
            rec.min_orbit_share = Fraction(int(kept_per[i]), int(found.orbit_size[i]))
        self.forest.parents.append(rec)
        out = []
        for k in np.flatnonzero(keep):
            out.append(Node(Q + found.rels[k], family, Q if family > 1 else None, None, 0.0,
                            found.values[k], float(found.errors[k]), threshold, b,
                            True, True))
        return out

    def finish(self, nodes: list, parent_S: dict) -> list:
        """Attach S_R, the true sector test and the classification."""
        vals = self.ev.S_below([(n.parent or (), n.address) for n in nodes])
        M = self.forest.params.M
        for n, v in zip(nodes, vals):
            n.S, n.S_err = v.value, v.error
            S_Q = parent_S.get(n.parent, np.zeros(2))
            if n.parent is None:
                n.sector_pass = True
            else:
                n.sector_pass = bool(np.any(n.S - S_Q)) and in_sector(n.S, sector(S_Q, SECTOR_120))
            n.alternative = classify_alternative(n, S_Q, M)
        nodes.sort(key=lambda n: (len(n.address), n.address))
        return nodes


def _mass(depths: np.ndarray, m: int) -> Fraction:
    counts = np.bincount(depths)
    return sum((Fraction(int(c), 4 ** (m + k)) for k, c in enumerate(counts) if c), Fraction(0))


def classify_alternative(node: Node, S_Q: np.ndarray, M: float) -> str:
    """``"A"``, ``"B"``, ``"AB"`` or ``"escalated"``.

    A: ``|S_R| <= 3(M+2) b``.  B: ``|S_R| <= |S_Q| - b``.  A node where
    neither holds for the computed values is flagged for escalation rather
    than passed.
    """
    r = float(np.linalg.norm(node.S))
    q = float(np.linalg.norm(S_Q))
    a = r <= 3 * (M + 2) * node.b
    bb = r <= q - node.b
    if a and bb:
        return "AB"
    if a:
        return "A"
    if bb:
        return "B"
    return "escalated"


def _check_kernel(config: CantorConfig, kernel: KernelSpec):
    if config.d != 2 or kernel.d != 2:
        raise ValueError("stopping families use plane octants (d = 2)")


def new_forest(config, kernel, params) -> StoppingForest:
    _check_kernel(config, kernel)
    if params.max_depth > config.max_generation:
        raise CantorError("max_depth exceeds max_generation")
    b = envelope_seq(config, params.C_emp).values
    return StoppingForest(config, kernel, params, tuple(b))


def first_generation(config: CantorConfig, kernel: KernelSpec, params: StoppingParams,
                     tol: float = DEFAULT_TOL) -> list[Node]:
    forest = new_forest(config, kernel, params)
    bld = _Builder(forest, Evaluator(config, kernel, tol))
    return bld.finish(bld.expand((), 1, None), {})


def next_generation(forest: StoppingForest, parent: Node, tol: float = DEFAULT_TOL) -> list[Node]:
    if parent.S is None or not np.any(parent.S):
        raise ParentValueMissing(f"parent {parent.address} has no S value")
    bld = _Builder(forest, Evaluator(forest.config, forest.kernel, tol))
    return bld.finish(bld.expand(parent.address, parent.family + 1, parent.S),
                      {parent.address: parent.S})


def build_forest(config: CantorConfig, kernel: KernelSpec, params: StoppingParams,
                 tol: float = 1e-4, workers: int = 1) -> StoppingForest:
    """All families down to ``params.max_depth``.

    The default tolerance is loose on purpose: thresholds are of order ``b``,
    and every node keeps its certificate.
    """
    forest = new_forest(config, kernel, params)
    bld = _Builder(forest, Evaluator(config, kernel, tol, workers=workers))
    fam = bld.finish(bld.expand((), 1, None), {})
    while fam:
        forest.families.append(fam)
        pending = []
        for node in fam:
            if node.generation < params.max_depth:
                pending.extend(bld.expand(node.address, node.family + 1, node.S))
        fam = bld.finish(pending, {n.address: n.S for n in fam})
    return forest


# --------------------------------------------------------------------------
# checks and traces

def check_forest(forest: StoppingForest) -> dict:
    """Exhaustive structural checks; returns findings with witnesses."""
    out = {}
    bad = None
    for fam in forest.families:
        addrs = sorted(n.address for n in fam)
        for a, b in zip(addrs, addrs[1:]):
            if b[: len(a)] == a:
                bad = bad or [list(a), list(b)]
    out["disjoint"] = {"ok": bad is None, "witness": bad}
    gaps = [n.generation - (len(n.parent) if n.parent else 0) for n in forest.nodes()]
    need = int(math.floor(forest.params.M)) + 1
    out["descent"] = {"min_gap": min(gaps) if gaps else None, "required": need,
                      "ok": not gaps or min(gaps) >= need}
    nested = all(n.parent is None or n.address[: len(n.parent)] == n.parent
                 for n in forest.nodes())
    out["nested"] = {"ok": nested}
    low = [r for r in forest.parents if r.coverage is not None and r.coverage < Fraction(1, 8)]
    out["coverage"] = {"ok": not low,
                       "min": str(min((r.coverage for r in forest.parents
                                       if r.coverage is not None), default=Fraction(1))),
                       "witness": [list(r.parent) for r in low]}
    alts = {}
    for n in forest.nodes():
        alts[n.alternative] = alts.get(n.alternative, 0) + 1
    out["alternatives"] = alts
    out["classified"] = all(n.alternative in ("A", "B", "AB", "escalated")
                            for n in forest.nodes())
    return out


@dataclass
class SurvivingTrace:
    generations: list
    values: list
    envelopes: list
    dichotomy_ok: list

    def to_json(self) -> dict:
        return {"m": self.generations, "S": [[float(v) for v in s] for s in self.values],
                "envelope": self.envelopes, "dichotomy_ok": self.dichotomy_ok}


def surviving_trace(forest: StoppingForest, digit_path: Sequence[int]) -> SurvivingTrace:
    """S along the nested stopping cubes containing ``digit_path``.

    ``envelope[k]`` is ``(M+1) b`` for family ``k+1``: every intermediate cube
    strictly between consecutive stopping cubes has ``|S - S_parent|`` at most
    that much.  ``dichotomy_ok[k]`` records
    ``|S_k| <= max(3(M+2) b, |S_{k-1}| - b)``.
    """
    path = tuple(digit_path)
    M = forest.params.M
    gens, vals, env, ok = [], [], [], []
    prev = np.zeros(2)
    for fam in forest.families:
        hit = [n for n in fam if path[: n.generation] == n.address]
        if not hit:
            break
        n = hit[0]
        gens.append(n.generation)
        vals.append(n.S)
        env.append((M + 1) * n.b)
        ok.append(bool(np.linalg.norm(n.S) <= max(3 * (M + 2) * n.b,
                                                  np.linalg.norm(prev) - n.b)))
        prev = n.S
    if not gens:
        raise PathNotInForest(f"no first-family cube contains {list(path)}")
    return SurvivingTrace(gens, vals, env, ok)


def intermediate_deviation(forest: StoppingForest, ev: Evaluator, digit_path) -> list[float]:
    """Observed ``max |S_m - S_{m_{k-1}}| / ((M+1) b)`` between consecutive stops."""
    tr = surviving_trace(forest, digit_path)
    out = []
    starts = [0] + tr.generations[:-1]
    prev_vals = [np.zeros(2)] + tr.values[:-1]
    for lo, hi, base, envv in zip(starts, tr.generations, prev_vals, tr.envelopes):
        worst = 0.0
        for m in range(lo + 1, hi):
            s = ev.S(point_address(digit_path, m)).value
            worst = max(worst, float(np.linalg.norm(s - base)))
        out.append(worst / envv)
    return out
