"""Measures on nested family systems and their growth bounds.

A family system is ``F_0 = {Q_0}, F_1, F_2, ...`` where each member of
``F_{n+1}`` sits inside a member of ``F_n``.  The measure ``nu`` gives the root
mass 1 and splits each parent's mass among its children in proportion to
``mu``.  Weights are exact dyadic rationals.  Parents without children keep
their mass as frontier mass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import mpmath
import numpy as np

from .cantor import CantorConfig, cube_center, iter_addresses, sample_point

MP_DIGITS = 50
# equality cases (e.g. nu = mu at the root) land within a few ulps of 1
MP_SLACK = mpmath.mpf("1e-40")


class DomainError(ValueError):
    pass


class EmptyParent(ValueError):
    pass


# --------------------------------------------------------------------------
# dimension formula

def dimension_bound(c, eps, alpha=1.0) -> float:
    """``alpha (1 - log c / log eps)``; needs ``0 < eps <= c <= 1`` and ``eps < 1``."""
    c, eps = float(c), float(eps)
    if not (0 < eps < 1 and eps <= c <= 1):
        raise DomainError(f"need 0 < eps <= c <= 1 and eps < 1 (got c={c}, eps={eps})")
    # log2 is exact on powers of two, so dyadic inputs give exact answers
    return float(alpha) * (1.0 - math.log2(c) / math.log2(eps))


def monotone_grid(alpha: float = 1.0, steps: int = 24) -> dict:
    """Check monotonicity of :func:`dimension_bound` on a log grid."""
    eps_grid = [2.0 ** (-k) for k in range(1, steps + 1)]
    worst = None
    ok = True
    for i, eps in enumerate(eps_grid):
        cs = [c for c in np.geomspace(eps, 1.0, steps)]
        vals = [dimension_bound(c, eps, alpha) for c in cs]
        if any(b < a for a, b in zip(vals, vals[1:])):
            ok, worst = False, {"eps": eps, "kind": "c"}
        if i:
            prev = eps_grid[i - 1]
            for c in cs:
                if c >= prev and dimension_bound(c, eps, alpha) < dimension_bound(c, prev, alpha):
                    ok, worst = False, {"eps": eps, "c": c, "kind": "eps"}
    return {"ok": ok, "witness": worst}


# --------------------------------------------------------------------------
# family systems

@dataclass
class FamilySystem:
    """``families[n]`` lists the addresses of ``F_n``; ``families[0] == [()]``."""

    d: int
    families: list
    parent: dict = field(default_factory=dict)   # child address -> parent address
    label: str = ""

    def __post_init__(self):
        self.families = [sorted(tuple(a) for a in fam) for fam in self.families]
        if not self.parent:
            self.parent = _infer_parents(self.families)

    def children(self) -> dict:
        out = {a: [] for fam in self.families for a in fam}
        for child, par in self.parent.items():
            out.setdefault(par, []).append(child)
        for v in out.values():
            v.sort()
        return out

    def family_of(self) -> dict:
        return {a: n for n, fam in enumerate(self.families) for a in fam}

    def to_json(self) -> dict:
        return {"d": self.d, "label": self.label,
                "families": [[list(a) for a in fam] for fam in self.families],
                "parent": [[list(c), list(p)] for c, p in sorted(self.parent.items())]}

    @classmethod
    def from_json(cls, doc: dict) -> "FamilySystem":
        parent = {tuple(c): tuple(p) for c, p in doc.get("parent", [])}
        return cls(doc["d"], [[tuple(a) for a in fam] for fam in doc["families"]],
                   parent, doc.get("label", ""))


def _infer_parents(families) -> dict:
    parent = {}
    for n in range(1, len(families)):
        prev = families[n - 1]
        for a in families[n]:
            hits = [p for p in prev if a[: len(p)] == p and len(p) < len(a)]
            if hits:
                parent[a] = max(hits, key=len)
    return parent


def mu(address: Sequence[int], d: int) -> Fraction:
    return Fraction(1, 2 ** (d * len(address)))


def from_forest(forest) -> FamilySystem:
    """Family system of a stopping forest (``F_0 = {Q_0}`` prepended)."""
    fams = [[()]] + [[n.address for n in fam] for fam in forest.families]
    parent = {}
    for fam in forest.families:
        for n in fam:
            parent[n.address] = n.parent if n.parent is not None else ()
    return FamilySystem(forest.config.d, fams, parent, "stopping-forest")


def uniform_system(d: int, depth: int) -> FamilySystem:
    """Every generation-n cube in ``F_n``: eps = 2^-d, c = 1."""
    fams = [list(iter_addresses(d, n)) for n in range(depth + 1)]
    parent = {a: a[:-1] for fam in fams[1:] for a in fam}
    return FamilySystem(d, fams, parent, "uniform")


def chain_system(d: int, digits: Sequence[int]) -> FamilySystem:
    fams = [[tuple(digits[:n])] for n in range(len(digits) + 1)]
    parent = {tuple(digits[:n]): tuple(digits[: n - 1]) for n in range(1, len(digits) + 1)}
    return FamilySystem(d, fams, parent, "chain")


def validate_family_system(system: FamilySystem, eps, c) -> dict:
    """Per-hypothesis pass/fail with the first witness.

    (a) ``F_0 = {Q_0}``; (b) nesting and ``mu(Q) <= eps mu(parent)``;
    (c) ``sum_children mu >= c mu(parent)`` for parents that have children.
    Childless parents are frontier nodes and are listed, not failed.
    """
    eps, c = Fraction(eps), Fraction(c)
    d = system.d
    a_ok = system.families[0] == [()]
    b_fail = None
    for n in range(1, len(system.families)):
        for q in system.families[n]:
            p = system.parent.get(q)
            if p is None or q[: len(p)] != p or p not in system.families[n - 1]:
                b_fail = b_fail or {"node": list(q), "reason": "not nested in F_%d" % (n - 1)}
            elif mu(q, d) > eps * mu(p, d):
                b_fail = b_fail or {"node": list(q), "parent": list(p),
                                    "ratio": str(mu(q, d) / mu(p, d))}
    kids = system.children()
    c_fail = None
    frontier = []
    worst = None
    last = len(system.families) - 1
    fam_of = system.family_of()
    for p, ch in sorted(kids.items()):
        if not ch:
            if fam_of.get(p, last) < last:
                frontier.append(list(p))
            continue
        ratio = sum((mu(q, d) for q in ch), Fraction(0)) / mu(p, d)
        worst = ratio if worst is None else min(worst, ratio)
        if ratio < c:
            c_fail = c_fail or {"parent": list(p), "coverage": str(ratio)}
    return {"a": {"ok": a_ok},
            "b": {"ok": b_fail is None, "eps": str(eps), "witness": b_fail},
            "c": {"ok": c_fail is None, "c": str(c), "witness": c_fail,
                  "min_coverage": None if worst is None else str(worst)},
            "frontier": frontier}


def realized_constants(system: FamilySystem) -> tuple[Fraction, Fraction]:
    """Largest valid ``eps`` ratio and smallest coverage over parents with children."""
    d = system.d
    eps = Fraction(0)
    for q, p in system.parent.items():
        eps = max(eps, mu(q, d) / mu(p, d))
    cov = None
    for p, ch in system.children().items():
        if ch:
            r = sum((mu(q, d) for q in ch), Fraction(0)) / mu(p, d)
            cov = r if cov is None else min(cov, r)
    return eps, (cov if cov is not None else Fraction(1))


# --------------------------------------------------------------------------
# the measure

@dataclass
class FrostmanMeasure:
    system: FamilySystem
    weights: dict                 # address -> Fraction, every family member
    frontier: dict                # childless non-final members -> their mass
    eps: Fraction
    c: Fraction
    alpha: float = 1.0

    @property
    def beta(self) -> float:
        return dimension_bound(self.c, self.eps, self.alpha)

    def family_total(self, n: int) -> Fraction:
        return sum((self.weights[q] for q in self.system.families[n]), Fraction(0))

    def frontier_before(self, n: int) -> Fraction:
        fam_of = self.system.family_of()
        return sum((m for q, m in self.frontier.items() if fam_of[q] < n), Fraction(0))

    def to_json(self) -> dict:
        return {"system": self.system.to_json(), "eps": str(self.eps), "c": str(self.c),
                "alpha": self.alpha, "beta": self.beta,
                "nu": {_key(q): str(w) for q, w in sorted(self.weights.items())},
                "frontier": {_key(q): str(w) for q, w in sorted(self.frontier.items())}}

    @classmethod
    def from_json(cls, doc: dict) -> "FrostmanMeasure":
        system = FamilySystem.from_json(doc["system"])
        return cls(system, {_unkey(k): Fraction(v) for k, v in doc["nu"].items()},
                   {_unkey(k): Fraction(v) for k, v in doc["frontier"].items()},
                   Fraction(doc["eps"]), Fraction(doc["c"]), doc.get("alpha", 1.0))


def _key(address) -> str:
    return ".".join(str(a) for a in address)


def _unkey(text: str) -> tuple:
    return tuple(int(a) for a in text.split(".")) if text else ()


def build_nu(system: FamilySystem, eps=None, c=None, alpha: float = 1.0) -> FrostmanMeasure:
    """Top-down recursion ``nu(Q) = nu(parent) mu(Q) / sum_siblings mu``.

    ``eps`` and ``c`` default to the realized constants of the system.
    """
    d = system.d
    if system.families[0] != [()]:
        raise ValueError("F_0 must be the unit cube")
    r_eps, r_c = realized_constants(system)
    eps = r_eps if eps is None else Fraction(eps)
    c = r_c if c is None else Fraction(c)
    kids = system.children()
    weights = {(): Fraction(1)}
    frontier = {}
    last = len(system.families) - 1
    for n, fam in enumerate(system.families):
        for p in fam:
            ch = kids.get(p, [])
            if not ch:
                if n < last:
                    frontier[p] = weights[p]
                continue
            total = sum((mu(q, d) for q in ch), Fraction(0))
            for q in ch:
                weights[q] = weights[p] * mu(q, d) / total
    return FrostmanMeasure(system, weights, frontier, eps, c, alpha)


def subtree_masses(measure: FrostmanMeasure) -> dict:
    """``nu`` of every prefix cube, by bottom-up summation over leaves.

    Leaves are last-family members and frontier members.  This is an
    independent route to the weights of the family members.
    """
    last = set(measure.system.families[-1])
    leaves = {q: w for q, w in measure.weights.items() if q in last}
    leaves.update(measure.frontier)
    out: dict = {}
    for q, w in leaves.items():
        for k in range(len(q) + 1):
            out[q[:k]] = out.get(q[:k], Fraction(0)) + w
    return out, leaves


def nu_of_cube(measure: FrostmanMeasure, P, masses=None, leaves=None) -> Fraction:
    """``nu(P)`` for any construction cube; below a leaf the leaf mass is
    spread in proportion to ``mu``."""
    if masses is None:
        masses, leaves = subtree_masses(measure)
    P = tuple(P)
    if P in masses:
        return masses[P]
    for k in range(len(P) - 1, -1, -1):
        L = P[:k]
        if L in leaves:
            return leaves[L] * Fraction(1, 2 ** (measure.system.d * (len(P) - k)))
        if L in masses:
            return Fraction(0)
    return Fraction(0)


def _mpf(q: Fraction):
    return mpmath.mpf(q.numerator) / q.denominator


def verify_growth(measure: FrostmanMeasure, config: CantorConfig,
                  max_centers: int = 64) -> dict:
    """Check the three growth bounds; violations are findings, not errors.

    Comparisons run in 50-digit arithmetic.

    * mass_ratio: ``nu(Q)/mu(Q) <= c^{-n}`` for ``Q`` in ``F_n`` (exact).
    * cube bound: ``nu(Q) <= C_cube d(Q)^beta`` for every prefix cube, with
      ``C_cube = c^{-1} (max_n a_n)^{beta/alpha} d^{-beta/2}``:  a cube below a
      member of ``F_n`` has ``nu <= c^{-n-1} mu <= c^{-1} mu^{beta/alpha}``.
    * ball bound: ``nu(B(x, r)) <= 4^{beta+2} C_cube r^beta`` for centers ``x``
      at leaves and ``r = k d(Q)/4`` (k = 1..4) for the cubes ``Q`` containing
      ``x``; ``nu(B)`` is bounded by the sum over generation-gen(Q) cubes
      meeting the ball.
    """
    with mpmath.workdps(MP_DIGITS):
        return _verify_growth(measure, config, max_centers)


def _verify_growth(measure, config, max_centers):
    system = measure.system
    d = system.d
    c, beta, alpha = measure.c, measure.beta, measure.alpha
    report = {"beta": beta, "c": str(c), "eps": str(measure.eps)}

    # mass_ratio, exact
    bad = None
    worst = Fraction(0)
    for n, fam in enumerate(system.families):
        lim = c ** (-n) if c else None
        for q in fam:
            ratio = measure.weights[q] / mu(q, d)
            if lim is not None:
                worst = max(worst, ratio / lim)
            if lim is None or ratio > lim:
                bad = bad or {"node": list(q), "family": n, "ratio": str(ratio)}
    report["mass_ratio"] = {"ok": bad is None, "max_ratio_over_bound": str(worst), "witness": bad}

    # mass conservation and consistency
    totals = [measure.family_total(n) + measure.frontier_before(n)
              for n in range(len(system.families))]
    report["mass"] = {"ok": all(t == 1 for t in totals), "totals": [str(t) for t in totals]}
    masses, leaves = subtree_masses(measure)
    mism = [list(q) for q, w in measure.weights.items() if masses.get(q) != w]
    report["consistency"] = {"ok": not mism, "witness": mism[:1]}

    # cube bound
    beta_m = mpmath.mpf(beta)
    amax = mpmath.mpf(float(np.max(config.densities)))
    C_cube = (1 / _mpf(c)) * amax ** (beta_m / alpha) * mpmath.mpf(d) ** (-beta_m / 2)
    worst_c = mpmath.mpf(0)
    witness = None
    for q, w in masses.items():
        diam = mpmath.mpf(config.side(len(q))) * mpmath.sqrt(d)
        r = _mpf(w) / (C_cube * diam ** beta_m)
        if r > worst_c:
            worst_c, witness = r, list(q)
    report["cube"] = {"ok": worst_c <= 1 + MP_SLACK, "C": float(C_cube), "max_ratio": float(worst_c),
                      "witness": witness}

    # ball bound
    C_ball = mpmath.mpf(4) ** (beta_m + 2) * C_cube
    centers = sorted(leaves)[:: max(1, len(leaves) // max_centers)][:max_centers]
    worst_b = mpmath.mpf(0)
    wit_b = None
    max_meet = 0
    for L in centers:
        x = sample_point(config, L, len(L)) if L else np.zeros(d)
        for g in range(len(L) + 1):
            diam = config.side(g) * math.sqrt(d)
            for k in (1, 2, 3, 4):
                r = k * diam / 4
                meet = _cubes_meeting_ball(config, x, r, g)
                max_meet = max(max_meet, len(meet))
                total = sum((nu_of_cube(measure, P, masses, leaves) for P in meet), Fraction(0))
                ratio = _mpf(total) / (C_ball * mpmath.mpf(r) ** beta_m)
                if ratio > worst_b:
                    worst_b, wit_b = ratio, {"leaf": list(L), "generation": g, "r": r}
    report["ball"] = {"ok": worst_b <= 1 + MP_SLACK, "C": float(C_ball), "max_ratio": float(worst_b),
                      "max_cubes_met": max_meet, "centers": len(centers), "witness": wit_b}
    report["ok"] = all(report[k]["ok"] for k in ("mass_ratio", "mass", "consistency", "cube", "ball"))
    return report


def _cubes_meeting_ball(config: CantorConfig, x: np.ndarray, r: float, g: int) -> list:
    """Generation-g cubes whose closed box meets the closed ball B(x, r)."""
    d = config.d
    out = []
    stack = [()]
    while stack:
        a = stack.pop()
        c = cube_center(config, a)
        half = config.side(len(a)) / 2
        gap = np.maximum(np.abs(x - c) - half, 0.0)
        if float(np.sqrt(gap @ gap)) > r:
            continue
        if len(a) == g:
            out.append(a)
        else:
            stack.extend(a + (b,) for b in range(2 ** d))
    return sorted(out)


def uniform_matches_mu(measure: FrostmanMeasure) -> bool:
    d = measure.system.d
    return all(w == mu(q, d) for q, w in measure.weights.items())


def iter_members(system: FamilySystem) -> Iterable[tuple]:
    for fam in system.families:
        yield from fam
