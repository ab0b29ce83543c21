"""Corner Cantor sets in R^d: configuration, addressing, geometry, densities.

A cube of generation ``n`` is addressed by a tuple of ``n`` digits in
``range(2**d)``.  Bit ``i`` of a digit selects the low (0) or high (1) corner
in coordinate ``i``.  The empty tuple is the unit cube ``Q_0``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np

Address = tuple  # tuple[int, ...]

# Generations evaluated past ``max_generation`` when summing convergent tails
# (second moments of the measure).  lambda < 1/2 makes terms shrink by 4 per step.
TAIL_GENERATIONS = 64


class CantorError(ValueError):
    pass


class BoundViolation(CantorError):
    def __init__(self, n: int, value: float, lo: float, hi: float):
        self.n = n
        self.value = value
        super().__init__(
            f"lambda_{n} = {value!r} outside [{lo!r}, {hi!r}) "
            f"(first offending index n={n})")


class DepthExceeded(CantorError):
    pass


class NotNearSet(CantorError):
    pass


# --------------------------------------------------------------------------
# dilation sequences

def _lambda_sqrt(n: int, d: int, alpha: float) -> float:
    # a_n = (n+1)^(-1/2)
    return 2.0 ** (-d / alpha) * ((n + 1) / n) ** (1.0 / (2.0 * alpha))


FORMULAS: dict[str, Callable[[int, int, float], float]] = {
    "sqrt": _lambda_sqrt,
}


def _lambda_function(spec: dict, d: int, alpha: float) -> Callable[[int], float]:
    kind = spec.get("kind")
    if kind == "constant":
        value = float(spec["value"])
        return lambda n: value
    if kind == "table":
        values = [float(v) for v in spec["values"]]
        if not values:
            raise CantorError("empty lambda table")
        # past the end of the table the last entry is repeated
        return lambda n: values[min(n, len(values)) - 1]
    if kind == "formula_id":
        try:
            f = FORMULAS[spec["id"]]
        except KeyError:
            raise CantorError(f"unknown lambda formula {spec.get('id')!r}; "
                              f"known: {sorted(FORMULAS)}") from None
        return lambda n: f(n, d, alpha)
    raise CantorError(f"unknown lambda kind {kind!r}")


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class CantorConfig:
    """Validated, immutable description of one corner Cantor set.

    Use :func:`make_config` rather than the constructor.
    """

    d: int
    alpha: float
    lambda_spec: dict = field(compare=False, hash=False)
    max_generation: int
    lambda_sup: float
    lambdas: tuple = field(repr=False)  # lambda_1 .. lambda_{G + tail}

    @cached_property
    def key(self) -> tuple:
        return (self.d, self.alpha, self.max_generation, self.lambdas)

    def __hash__(self) -> int:
        return hash(self.key)

    def __eq__(self, other) -> bool:
        return isinstance(other, CantorConfig) and self.key == other.key

    @property
    def branching(self) -> int:
        return 2 ** self.d

    def lam(self, n: int) -> float:
        return self.lambdas[n - 1]

    @cached_property
    def sides(self) -> np.ndarray:
        """``s_0 .. s_{G+tail}``; each entry is the correctly rounded exact product."""
        out = [1.0]
        acc = Fraction(1)
        for lam in self.lambdas:
            acc *= Fraction(lam)
            out.append(float(acc))
        return np.array(out)

    @cached_property
    def half_steps(self) -> np.ndarray:
        """``(s_{k-1} - s_k)/2`` for k = 1.. (index k-1): child-center offset."""
        out = []
        acc_prev = Fraction(1)
        for lam in self.lambdas:
            acc = acc_prev * Fraction(lam)
            out.append(float((acc_prev - acc) / 2))
            acc_prev = acc
        return np.array(out)

    @cached_property
    def variances(self) -> np.ndarray:
        """Per-coordinate variance of mu restricted to a generation-n cube.

        The coordinate is a sum of independent +-(s_{k-1}-s_k)/2 steps, k > n.
        """
        sq = self.half_steps ** 2
        tail = np.cumsum(sq[::-1])[::-1]
        return np.append(tail, 0.0)[: self.max_generation + 1].copy()

    @cached_property
    def densities(self) -> np.ndarray:
        s = self.sides[: self.max_generation + 1]
        n = np.arange(self.max_generation + 1)
        return np.ldexp(s ** (-self.alpha), -self.d * n)

    def side(self, n: int) -> float:
        return float(self.sides[n])

    def measure(self, n: int) -> Fraction:
        return Fraction(1, 2 ** (self.d * n))

    def to_json(self) -> dict:
        return {"d": self.d, "alpha": self.alpha, "lambda": self.lambda_spec,
                "max_generation": self.max_generation,
                "lambda_sup": self.lambda_sup}


def make_config(d: int, alpha: float, lambda_spec, max_generation: int = 12,
                lambda_sup: float | None = None,
                allow_subcritical: bool = False) -> CantorConfig:
    """Build and validate a :class:`CantorConfig`.

    ``lambda_spec`` is either a JSON-style dict (kinds ``constant``, ``table``,
    ``formula_id``), a float (constant), or a callable ``n -> lambda_n``.
    Every ``lambda_n`` with ``n <= max_generation`` must satisfy
    ``2**(-d/alpha) <= lambda_n <= lambda_sup < 1/2``.  ``allow_subcritical``
    drops the lower bound.
    """
    d = int(d)
    alpha = float(alpha)
    if d < 1:
        raise CantorError("d must be >= 1")
    if not 0 < alpha <= d:
        raise CantorError(f"alpha must lie in (0, d]; got {alpha}")
    if max_generation < 0:
        raise CantorError("max_generation must be >= 0")
    if callable(lambda_spec):
        fn, spec_json = lambda_spec, {"kind": "callable"}
    else:
        if isinstance(lambda_spec, (int, float)):
            lambda_spec = {"kind": "constant", "value": float(lambda_spec)}
        fn, spec_json = _lambda_function(lambda_spec, d, alpha), dict(lambda_spec)

    lambdas = tuple(float(fn(n)) for n in range(1, max_generation + TAIL_GENERATIONS + 1))
    lo = 0.0 if allow_subcritical else 2.0 ** (-d / alpha)
    head = lambdas[:max_generation]
    sup = max(head, default=lo) if lambda_sup is None else float(lambda_sup)
    if not sup < 0.5:
        # report the first index that reaches the stated bound
        for n, lam in enumerate(head, 1):
            if lam >= 0.5:
                raise BoundViolation(n, lam, lo, 0.5)
        raise CantorError(f"lambda_sup = {sup} must be < 1/2")
    for n, lam in enumerate(head, 1):
        if not (lo <= lam <= sup) or lam <= 0:
            raise BoundViolation(n, lam, lo, min(sup, 0.5))
    # the tail only feeds convergent sums; keep it inside (0, 1/2)
    lambdas = head + tuple(min(max(lam, 1e-300), sup) for lam in lambdas[max_generation:])
    return CantorConfig(d=d, alpha=alpha, lambda_spec=spec_json,
                        max_generation=max_generation, lambda_sup=sup,
                        lambdas=lambdas)


def config_from_json(doc) -> CantorConfig:
    if isinstance(doc, str):
        doc = json.loads(doc)
    return make_config(doc["d"], doc["alpha"], doc["lambda"],
                       doc.get("max_generation", 12), doc.get("lambda_sup"))


def preset(name: str, max_generation: int | None = None) -> CantorConfig:
    """Named configurations: garnett, geo08, sqrt, riesz-d3."""
    if name == "garnett":
        return make_config(2, 1.0, 0.25, max_generation or 12)
    if name == "geo08":
        # a_n = 0.8**n
        return make_config(2, 1.0, 0.3125, max_generation or 12)
    if name == "sqrt":
        return make_config(2, 1.0, {"kind": "formula_id", "id": "sqrt"},
                           max_generation or 12)
    if name == "riesz-d3":
        lam = min(2.0 ** (-3 / 1.5) * 1.05, 0.5 - 1e-12)
        return make_config(3, 1.5, lam, max_generation or 8)
    raise CantorError(f"unknown preset {name!r}; known: {PRESETS}")


PRESETS = ("garnett", "geo08", "sqrt", "riesz-d3")


# --------------------------------------------------------------------------
# addresses

def address_index(address: Sequence[int], d: int) -> int:
    idx = 0
    for digit in address:
        idx = (idx << d) | int(digit)
    return idx


def index_address(index: int, n: int, d: int) -> Address:
    mask = (1 << d) - 1
    return tuple((index >> (d * (n - 1 - k))) & mask for k in range(n))


def is_prefix(p: Sequence[int], q: Sequence[int]) -> bool:
    """True iff the cube addressed by ``q`` lies inside the one addressed by ``p``."""
    return len(p) <= len(q) and tuple(q[: len(p)]) == tuple(p)


def iter_addresses(d: int, n: int) -> Iterator[Address]:
    """All generation-``n`` addresses in lexicographic order, lazily."""
    for i in range(2 ** (d * n)):
        yield index_address(i, n, d)


def digit_bits(digit: int, d: int) -> np.ndarray:
    return np.array([(digit >> i) & 1 for i in range(d)], dtype=np.int64)


def corner_signs(d: int) -> np.ndarray:
    """(2**d, d) array; row b holds the +-1 corner direction of child b."""
    b = np.arange(2 ** d)[:, None]
    return (2 * ((b >> np.arange(d)[None, :]) & 1) - 1).astype(float)


# --------------------------------------------------------------------------
# cubes

@dataclass(frozen=True)
class Cube:
    address: Address
    center: tuple
    side: float
    generation: int
    measure: Fraction

    @property
    def diameter(self) -> float:
        return self.side * math.sqrt(len(self.center))

    @property
    def lower(self) -> tuple:
        return tuple(c - self.side / 2 for c in self.center)


def _check_depth(config: CantorConfig, n: int) -> None:
    if n > config.max_generation:
        raise DepthExceeded(f"generation {n} > max_generation {config.max_generation}")


def cube_center(config: CantorConfig, address: Sequence[int]) -> np.ndarray:
    d = config.d
    terms = [[0.5] for _ in range(d)]
    for k, digit in enumerate(address, 1):
        step = config.half_steps[k - 1]
        for i in range(d):
            terms[i].append(step if (digit >> i) & 1 else -step)
    return np.array([math.fsum(t) for t in terms])


def cube_of(config: CantorConfig, address: Sequence[int]) -> Cube:
    address = tuple(int(a) for a in address)
    n = len(address)
    _check_depth(config, n)
    if any(not 0 <= a < config.branching for a in address):
        raise CantorError(f"digit out of range in {address}")
    return Cube(address=address, center=tuple(cube_center(config, address)),
                side=config.side(n), generation=n, measure=config.measure(n))


def cube_centers(config: CantorConfig, n: int) -> np.ndarray:
    """Centers of all generation-``n`` cubes, shape (2**(d n), d), address order."""
    _check_depth(config, n)
    signs = corner_signs(config.d)
    centers = np.full((1, config.d), 0.5)
    for k in range(1, n + 1):
        centers = (centers[:, None, :] + signs[None, :, :] * config.half_steps[k - 1])
        centers = centers.reshape(-1, config.d)
    return centers


# --------------------------------------------------------------------------
# densities

def density(config: CantorConfig, n: int) -> float:
    """``a_n = 2**(-d n) s_n**(-alpha)``."""
    _check_depth(config, n)
    return float(config.densities[n])


@dataclass(frozen=True)
class EnvelopeSeq:
    C_emp: float
    values: tuple

    def __getitem__(self, n: int) -> float:
        return self.values[n]

    def __len__(self) -> int:
        return len(self.values)


def envelope_seq(config: CantorConfig, C_emp: float) -> EnvelopeSeq:
    """Non-increasing envelope ``b_n = C_emp max_{n <= m <= G} a_m``."""
    if not C_emp > 0:
        raise CantorError("C_emp must be positive")
    a = config.densities
    running = np.maximum.accumulate(a[::-1])[::-1]
    return EnvelopeSeq(C_emp=float(C_emp), values=tuple(float(C_emp * v) for v in running))


def envelope(config: CantorConfig, C_emp: float, n: int) -> float:
    _check_depth(config, n)
    return envelope_seq(config, C_emp)[n]


# --------------------------------------------------------------------------
# points

def sample_point(config: CantorConfig, digit_stream: Sequence[int], depth: int) -> np.ndarray:
    """Corner of the generation-``depth`` cube that it shares with its parent.

    This is the point whose digit expansion is ``digit_stream[:depth]``
    followed by the last digit repeated forever, hence a point of K.
    """
    if len(digit_stream) < depth:
        raise CantorError("digit stream shorter than depth")
    address = tuple(digit_stream[:depth])
    _check_depth(config, depth)
    if depth == 0:
        return np.zeros(config.d)
    sides = config.sides
    out = np.zeros(config.d)
    for i in range(config.d):
        terms = [sides[k] - sides[k + 1] for k, digit in enumerate(address) if (digit >> i) & 1]
        if (address[-1] >> i) & 1:
            terms.append(sides[depth])
        out[i] = math.fsum(terms)
    return out


def point_address(digits: Sequence[int], n: int) -> Address:
    """Generation-``n`` address of the point encoded by ``digits`` (last digit repeats)."""
    digits = tuple(digits)
    if n <= len(digits):
        return digits[:n]
    if not digits:
        return (0,) * n
    return digits + (digits[-1],) * (n - len(digits))


def point_from_digits(config: CantorConfig, digits: Sequence[int]) -> np.ndarray:
    digits = tuple(digits) or (0,)
    return sample_point(config, digits, len(digits))


def _box_distance(point: np.ndarray, center: np.ndarray, side: float) -> float:
    gap = np.maximum(np.abs(point - center) - side / 2, 0.0)
    return float(np.sqrt(np.sum(gap * gap)))


def locate(config: CantorConfig, point, n: int) -> Address:
    """Generation-``n`` cube whose closure contains (or is nearest to) ``point``.

    Coordinates exactly on a midplane go to the low child, which yields the
    lexicographically smallest address among tied candidates.
    """
    _check_depth(config, n)
    p = np.asarray(point, dtype=float)
    center = np.full(config.d, 0.5)
    address = []
    for k in range(1, n + 1):
        bits = (p > center).astype(np.int64)
        address.append(int(np.sum(bits << np.arange(config.d))))
        center = center + (2 * bits - 1) * config.half_steps[k - 1]
    side = config.side(n)
    if _box_distance(p, center, side) > side * math.sqrt(config.d):
        raise NotNearSet(f"point {p.tolist()} is farther than s_{n}*sqrt(d) "
                         f"from every generation-{n} cube")
    return tuple(address)


def corner_points(config: CantorConfig, count: int, depth: int,
                  seed: int = 0) -> list[Address]:
    """Deterministic digit strings of length ``depth`` (points of K)."""
    rng = np.random.default_rng(seed)
    digits = rng.integers(0, config.branching, size=(count, depth))
    return [tuple(int(x) for x in row) for row in digits]
