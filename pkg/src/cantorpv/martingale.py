"""Truncated transforms T_n, the martingale S_n = S_Q and relative values S_{Q,R}.

``S_Q = (1/mu(Q)) ∫_Q ∫_{K \\ Q} K(z - y) dmu(y) dmu(z)``.  ``K \\ Q`` splits
along the ancestor chain ``Q_0 ⊃ Q_1 ⊃ ... ⊃ Q_n = Q`` into the siblings of
each ``Q_{j+1}`` inside ``Q_j``; each sibling enters as one pair task.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .cantor import (CantorConfig, CantorError, EnvelopeSeq, cube_center,
                     envelope_seq, iter_addresses, point_address, point_from_digits)
from .kernels import KernelSpec
from .quadrature import (DEFAULT_ETA, IntegralRequest, IntegralResult, PairTask,
                         _tables, solve_pair_tasks, treecode_batch)

DEFAULT_TOL = 1e-6


class NotNested(CantorError):
    pass


class Certified(NamedTuple):
    value: np.ndarray
    error: float


@dataclass(frozen=True)
class RelativeValue:
    Q: tuple
    R: tuple
    value: np.ndarray = field(compare=False)
    error: float


def chain_tasks(Q: Sequence[int], R: Sequence[int], d: int, out: int) -> list[PairTask]:
    """Pair tasks covering ``R x (Q \\ R)`` for ``R`` strictly inside ``Q``."""
    Q, R = tuple(Q), tuple(R)
    tasks = []
    for j in range(len(Q), len(R)):
        for b in range(2 ** d):
            if b != R[j]:
                tasks.append(PairTask(out, R, R[:j] + (b,)))
    return tasks


class Evaluator:
    """Cached certified values of S_Q, S_{Q,R} and T_n for one config and kernel.

    Relative values are cached by ``(gen(Q), digits of R below Q)``: every
    generation-m cube carries an identical (translated) copy of the set.
    """

    def __init__(self, config: CantorConfig, kernel: KernelSpec, tol: float = DEFAULT_TOL,
                 eta: float = DEFAULT_ETA, workers: int = 1):
        if kernel.d != config.d:
            raise ValueError("kernel and config live in different dimensions")
        self.config = config
        self.kernel = kernel
        self.tol = float(tol)
        self.eta = eta
        self.workers = workers
        self._rel: dict = {}
        self._T: dict = {}

    # -- relative values ------------------------------------------------
    def _rel_key(self, Q, R):
        return (len(Q), tuple(R[len(Q):]))

    def relative_many(self, pairs: Iterable[tuple]) -> list[Certified]:
        pairs = [(tuple(Q), tuple(R)) for Q, R in pairs]
        for Q, R in pairs:
            if len(R) <= len(Q) or R[: len(Q)] != Q:
                raise NotNested(f"{R} is not strictly inside {Q}")
        missing = []
        seen = set()
        for Q, R in pairs:
            key = self._rel_key(Q, R)
            if key not in self._rel and key not in seen:
                seen.add(key)
                missing.append(key)
        if missing:
            d = self.config.d
            tasks = []
            scale = np.empty(len(missing))
            for k, (m, rel) in enumerate(missing):
                Q0 = (0,) * m
                tasks.extend(chain_tasks(Q0, Q0 + rel, d, k))
                scale[k] = 2.0 ** (d * (m + len(rel)))
            values, bounds, _ = solve_pair_tasks(self.config, self.kernel, tasks, len(missing),
                                                 self.tol, scale, self.eta, self.workers)
            for k, key in enumerate(missing):
                self._rel[key] = Certified(values[k], float(bounds[k]))
        return [self._rel[self._rel_key(Q, R)] for Q, R in pairs]

    def relative(self, Q, R) -> Certified:
        return self.relative_many([(Q, R)])[0]

    # -- martingale --------------------------------------------------------
    def S_many(self, cubes: Iterable[Sequence[int]]) -> list[Certified]:
        out = []
        todo = []
        cubes = [tuple(c) for c in cubes]
        for c in cubes:
            if c:
                todo.append(((), c))
        vals = dict(zip([c for _, c in todo], self.relative_many(todo))) if todo else {}
        for c in cubes:
            out.append(vals[c] if c else Certified(np.zeros(self.config.d), 0.0))
        return out

    def S_below(self, pairs: Iterable[tuple]) -> list[Certified]:
        """``S_R = S_{Q,R} + avg_R(field of K \\ Q)`` for ``R`` strictly inside ``Q``.

        Reuses the cached relative value; only the interactions of R with the
        siblings along the chain above Q are new.
        """
        pairs = [(tuple(Q), tuple(R)) for Q, R in pairs]
        rel = self.relative_many([(Q, R) for Q, R in pairs if Q])
        d = self.config.d
        tasks = []
        for k, (Q, R) in enumerate(pairs):
            for j in range(len(Q)):
                for b in range(2 ** d):
                    if b != Q[j]:
                        tasks.append(PairTask(k, R, Q[:j] + (b,)))
        scale = np.array([2.0 ** (d * len(R)) for _, R in pairs])
        values, bounds, _ = solve_pair_tasks(self.config, self.kernel, tasks, len(pairs),
                                             self.tol, scale, self.eta, self.workers)
        out = []
        it = iter(rel)
        for k, (Q, R) in enumerate(pairs):
            if Q:
                r = next(it)
                out.append(Certified(values[k] + r.value, float(bounds[k]) + r.error))
            else:
                out.append(self.relative((), R))
        return out

    def S(self, Q) -> Certified:
        return self.S_many([Q])[0]

    # -- truncated transforms ---------------------------------------------
    def T_many(self, items: Iterable[tuple]) -> list[Certified]:
        """``items`` are ``(x_digits, n)``; ``T_n(x) = ∫_{K \\ Q_n(x)} K(x - y) dmu``."""
        items = [(tuple(xd), int(n)) for xd, n in items]
        missing = []
        for key in items:
            if key not in self._T and key not in missing:
                if key[1] == 0:
                    self._T[key] = Certified(np.zeros(self.config.d), 0.0)
                else:
                    missing.append(key)
        if missing:
            reqs = [IntegralRequest.make(point_from_digits(self.config, xd),
                                         point_address(xd, n), self.tol)
                    for xd, n in missing]
            res = treecode_batch(self.config, self.kernel, reqs, self.eta, self.workers)
            for key, r in zip(missing, res):
                self._T[key] = Certified(r.value, r.error_bound)
        return [self._T[key] for key in items]

    def T(self, x_digits, n) -> Certified:
        return self.T_many([(x_digits, n)])[0]


# --------------------------------------------------------------------------
# module-level operations

def truncated_transform(config, kernel, x_digits, n, tol=DEFAULT_TOL) -> Certified:
    if n > config.max_generation:
        raise CantorError("n exceeds max_generation")
    return Evaluator(config, kernel, tol).T(x_digits, n)


def martingale_value(config, kernel, Q, tol=DEFAULT_TOL) -> Certified:
    return Evaluator(config, kernel, tol).S(Q)


def relative_value(config, kernel, Q, R, tol=DEFAULT_TOL) -> RelativeValue:
    v = Evaluator(config, kernel, tol).relative(Q, R)
    return RelativeValue(tuple(Q), tuple(R), v.value, v.error)


def martingale_value_by_averaging(config: CantorConfig, kernel: KernelSpec, Q,
                                  levels: int = 3, tol: float = DEFAULT_TOL) -> Certified:
    """Second route to S_Q: average the treecode field of ``K \\ Q`` over the
    generation ``n + levels`` sub-cube centers of Q.

    The field is smooth on Q; replacing the average over each sub-cube P by
    the value at its center costs at most
    ``sigma^2/2 sup|Laplacian F| + C_4/24 h^4 sup|D^4 F|`` with both sups
    controlled by the distance from P to ``K \\ Q``.
    """
    from .kernels import derivative_bound, laplacian_bound

    Q = tuple(Q)
    n = len(Q)
    N = n + levels
    if N > config.max_generation:
        raise CantorError("averaging depth exceeds max_generation")
    t = _tables(config)
    sub = cube_centers_below(config, Q, levels)
    reqs = [IntegralRequest.make(z, Q, tol / 2) for z in sub]
    res = treecode_batch(config, kernel, reqs)
    value = np.mean([r.value for r in res], axis=0)
    quad_err = max(r.error_bound for r in res)
    # distance from any sub-cube to K \ Q is at least the gap at the first split
    gap = _gap_to_complement(config, Q)
    rho = gap  # sub-cubes sit inside Q, the complement is outside by >= gap
    a = kernel.alpha
    atom = 0.0
    if not kernel.harmonic:
        atom += 0.5 * t.var[N] * laplacian_bound(kernel) * rho ** (-a - 2)
    atom += derivative_bound(kernel, 4) / 24 * t.half[N] ** 4 * rho ** (-a - 4)
    return Certified(value, quad_err + atom)


def cube_centers_below(config: CantorConfig, Q, levels: int) -> np.ndarray:
    t = _tables(config)
    centers = cube_center(config, Q)[None, :]
    for g in range(len(Q), len(Q) + levels):
        centers = (centers[:, None, :] + t.signs[None] * t.steps[g]).reshape(-1, config.d)
    return centers


def _gap_to_complement(config: CantorConfig, Q) -> float:
    """Lower bound on dist(Q, K \\ Q): for each ancestor, the gap between
    the child containing Q and its siblings (Euclidean distance of boxes)."""
    best = math.inf
    for j in range(len(Q)):
        # children of Q_j are separated by s_j - 2 s_{j+1} in each differing coordinate
        best = min(best, config.side(j) - 2 * config.side(j + 1))
    return best


# --------------------------------------------------------------------------
# traces and bounds

@dataclass
class TraceRow:
    n: int
    T: np.ndarray
    S: np.ndarray
    a: float
    b: float | None
    errT: float
    errS: float

    def to_json(self) -> dict:
        return {"n": self.n, "T": [float(v) for v in self.T], "S": [float(v) for v in self.S],
                "a": self.a, "b": self.b, "errT": self.errT, "errS": self.errS}


@dataclass
class MartingaleTrace:
    point: tuple
    rows: list

    def S(self) -> np.ndarray:
        return np.array([r.S for r in self.rows])

    def to_json(self) -> dict:
        return {"point": list(self.point), "rows": [r.to_json() for r in self.rows]}


def traces(ev: Evaluator, points: Sequence[Sequence[int]], n_max: int,
           envelope: EnvelopeSeq | None = None) -> list[MartingaleTrace]:
    cfg = ev.config
    cubes = {point_address(p, n) for p in points for n in range(n_max + 1)}
    ev.S_many(sorted(cubes, key=lambda c: (len(c), c)))
    ev.T_many([(p, n) for p in points for n in range(n_max + 1)])
    out = []
    for p in points:
        rows = []
        for n in range(n_max + 1):
            s = ev.S(point_address(p, n))
            tt = ev.T(p, n)
            rows.append(TraceRow(n, tt.value, s.value, float(cfg.densities[n]),
                                 None if envelope is None else envelope[n],
                                 tt.error, s.error))
        out.append(MartingaleTrace(tuple(p), rows))
    return out


def trace(config, kernel, x_digits, n_max, tol=DEFAULT_TOL, C_emp=None) -> MartingaleTrace:
    ev = Evaluator(config, kernel, tol)
    env = None if C_emp is None else envelope_seq(config, C_emp)
    return traces(ev, [tuple(x_digits)], n_max, env)[0]


@dataclass
class BoundEntry:
    """Maximal observed ``|lhs| / a_index`` for one inequality family.

    ``ratio`` uses the computed values; ``ratio_hi``/``ratio_lo`` widen by the
    quadrature certificates.
    """

    name: str
    ratio: float = 0.0
    ratio_hi: float = 0.0
    ratio_lo: float = 0.0
    witness: dict | None = None
    per_generation: dict = field(default_factory=dict)
    samples: int = 0
    cap: float | None = None

    @property
    def failed(self) -> bool:
        return self.cap is not None and self.ratio_lo > self.cap

    def add(self, lhs: np.ndarray, cert: float, a: float, gen: int, witness: dict):
        mag = float(np.linalg.norm(lhs))
        ratio = mag / a
        self.samples += 1
        if ratio > self.ratio:
            self.ratio = ratio
            self.witness = witness
        self.ratio_hi = max(self.ratio_hi, (mag + cert) / a)
        self.ratio_lo = max(self.ratio_lo, max(mag - cert, 0.0) / a)
        self.per_generation[gen] = max(self.per_generation.get(gen, 0.0), ratio)

    def to_json(self) -> dict:
        return {"name": self.name, "max_ratio": self.ratio, "max_ratio_hi": self.ratio_hi,
                "max_ratio_lo": self.ratio_lo, "witness": self.witness,
                "per_generation": {str(k): v for k, v in sorted(self.per_generation.items())},
                "samples": self.samples, "cap": self.cap,
                "status": "FAIL" if self.failed else "ok"}


@dataclass
class BoundReport:
    increment: BoundEntry
    s_minus_t: BoundEntry
    relative: BoundEntry        # |S_R - S_Q - S_{Q,R}| / a_m
    relative_step: BoundEntry   # |S_{Q,R} - S_{Q,R~}| / a_n

    @property
    def entries(self) -> list[BoundEntry]:
        return [self.increment, self.s_minus_t, self.relative, self.relative_step]

    @property
    def failed(self) -> bool:
        return any(e.failed for e in self.entries)

    def max_ratio(self) -> float:
        return max(e.ratio for e in self.entries)

    def to_json(self) -> dict:
        return {e.name: e.to_json() for e in self.entries}


def verify_bounds(config: CantorConfig, kernel: KernelSpec, sample_points, n_max: int,
                  tol: float = DEFAULT_TOL, caps: dict | None = None,
                  evaluator: Evaluator | None = None) -> BoundReport:
    """Worst observed ratios for the four increment-type inequalities.

    Along each sample chain ``Q_n = Q_n(x)``:

    * increment: ``|S_{n+1} - S_n| / a_n`` for ``0 <= n <= n_max``;
    * s_minus_t: ``|S_n - T_n| / a_n`` for ``0 <= n <= n_max``;
    * relative: ``|S_{Q_n} - S_{Q_m} - S_{Q_m,Q_n}| / a_m``, ``m < n <= n_max``;
    * relative_step: ``|S_{Q_m,Q_{n+1}} - S_{Q_m,Q_n}| / a_n``, ``m < n < n_max``.
    """
    ev = evaluator or Evaluator(config, kernel, tol)
    caps = caps or {}
    a = config.densities
    points = [tuple(p) for p in sample_points]
    rep = BoundReport(*(BoundEntry(name, cap=caps.get(name))
                        for name in ("increment", "s_minus_t", "relative", "relative_step")))
    chains = {p: [point_address(p, n) for n in range(n_max + 2)] for p in points}
    ev.S_many({c for ch in chains.values() for c in ch})
    ev.T_many([(p, n) for p in points for n in range(n_max + 1)])
    ev.relative_many({(ch[m], ch[n]) for ch in chains.values()
                      for m in range(n_max + 1) for n in range(m + 1, n_max + 1)})
    for p in points:
        ch = chains[p]
        S = [ev.S(c) for c in ch]
        for n in range(n_max + 1):
            w = {"point": list(p), "n": n}
            rep.increment.add(S[n + 1].value - S[n].value, S[n + 1].error + S[n].error,
                              a[n], n, w)
            T = ev.T(p, n)
            rep.s_minus_t.add(S[n].value - T.value, S[n].error + T.error, a[n], n, w)
        for m in range(n_max + 1):
            for n in range(m + 1, n_max + 1):
                rel = ev.relative(ch[m], ch[n])
                w = {"point": list(p), "m": m, "n": n}
                rep.relative.add(S[n].value - S[m].value - rel.value,
                                 S[n].error + S[m].error + rel.error, a[m], m, w)
                if n + 1 <= n_max:
                    nxt = ev.relative(ch[m], ch[n + 1])
                    rep.relative_step.add(nxt.value - rel.value, nxt.error + rel.error,
                                          a[n], n, w)
    return rep



def verify_relative_bounds(config: CantorConfig, kernel: KernelSpec, max_outer: int,
                           max_inner: int, tol: float = DEFAULT_TOL, caps: dict | None = None,
                           evaluator: Evaluator | None = None) -> BoundReport:
    """Exhaustive sweep of the two relative inequalities.

    Every pair ``R ⊊ Q`` with ``gen(Q) <= max_outer`` and ``gen(R) <= max_inner``
    enters ``relative``; ``relative_step`` compares R with its parent when the
    parent is still strictly inside Q.  The increment and s_minus_t entries
    stay empty.
    """
    ev = evaluator or Evaluator(config, kernel, tol)
    caps = caps or {}
    a = config.densities
    d = config.d
    rep = BoundReport(*(BoundEntry(name, cap=caps.get(name))
                        for name in ("increment", "s_minus_t", "relative", "relative_step")))
    cubes = [c for n in range(max_inner + 1) for c in iter_addresses(d, n)]
    S = dict(zip(cubes, ev.S_many(cubes)))
    pairs = [(Q, R) for m in range(max_outer + 1) for Q in iter_addresses(d, m)
             for n in range(m + 1, max_inner + 1) for R in _descendants(Q, n - m, d)]
    ev.relative_many(pairs)
    for Q, R in pairs:
        m, n = len(Q), len(R)
        rel = ev.relative(Q, R)
        w = {"Q": list(Q), "R": list(R)}
        rep.relative.add(S[R].value - S[Q].value - rel.value,
                         S[R].error + S[Q].error + rel.error, a[m], m, w)
        if n - 1 > m:
            up = ev.relative(Q, R[:-1])
            rep.relative_step.add(rel.value - up.value, rel.error + up.error, a[n - 1], n - 1, w)
    return rep


def _descendants(Q: tuple, k: int, d: int):
    for tail in iter_addresses(d, k):
        yield Q + tuple(tail)

# --------------------------------------------------------------------------
# principal values

def pv_estimate(config: CantorConfig, kernel: KernelSpec, x_digits, epsilons,
                tol: float = 1e-3) -> list[IntegralResult]:
    """Truncated integrals ``∫_{|y - x| > eps} K(x - y) dmu(y)``.

    Cells straddling the sphere are refined to max_generation; the remainder
    enters the certificate as ``mu(P) sup|K| <= mu(P) C_0 eps^(-alpha)``.
    """
    eps = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    floor = config.side(config.max_generation)
    if eps and eps[-1] < floor:
        raise ValueError(f"epsilon below the resolvable floor s_G = {floor:.3e}")
    x = point_from_digits(config, x_digits)
    diam = math.sqrt(config.d)
    out = []
    reqs = []
    for e in eps:
        reqs.append(IntegralRequest.make(x, None, tol, e))
    res = treecode_batch(config, kernel, reqs)
    for e, r in zip(eps, res):
        if e >= diam:
            out.append(IntegralResult(np.zeros(config.d), 0.0, 0, 0))
        else:
            out.append(r)
    return out


def pv_radius_for(config: CantorConfig, n: int) -> float:
    """``eps = d(Q_n)``, the left end of ``d(Q_n) <= eps < d(Q_{n-1})``."""
    return config.side(n) * math.sqrt(config.d)


def oscillation(S: np.ndarray, lo: int, hi: int) -> float:
    """``max_{lo <= n, m <= hi} |S_n - S_m|`` for a trace array indexed by n."""
    block = S[lo: hi + 1]
    diff = block[:, None, :] - block[None, :, :]
    return float(np.max(np.linalg.norm(diff, axis=-1)))


def diagnose_convergence(S: np.ndarray, b: Sequence[float], window: tuple) -> dict:
    """Finite-depth Cauchy test: oscillation on ``window`` vs ``3 sum b_k``.

    The increments inside ``[lo, hi]`` are ``S_{k+1} - S_k`` for ``lo <= k < hi``,
    each at most ``b_k``; the proxy is that sum.
    """
    lo, hi = window
    osc = oscillation(S, lo, hi)
    proxy = float(sum(b[k] for k in range(lo, hi)))
    return {"window": [lo, hi], "oscillation": osc, "tail_proxy": proxy,
            "threshold": 3 * proxy, "cauchy_like": osc <= 3 * proxy}
