"""Odd singular kernels on R^d \\ {0} and the bounds the summation code relies on.

Plane kernels are complex functions; a value ``u + iv`` is returned as the
vector ``(u, v)``.  So the Cauchy kernel ``1/z`` is ``(x, -y)/|x|^2``, the
reflection of the Riesz field ``x/|x|^2`` in the first axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

CAUCHY, RIESZ, ODDPOWER, PROBE = "cauchy", "riesz", "oddpower", "probe"
NOT_EQUIVARIANT = 0


class SingularPoint(ValueError):
    pass


class NotSeparated(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    d: int = 2
    alpha: float = 1.0
    m: int = 0

    def __post_init__(self):
        if self.kind not in (CAUCHY, RIESZ, ODDPOWER, PROBE):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind != RIESZ and (self.d != 2 or self.alpha != 1.0):
            raise ValueError(f"{self.kind} kernel lives in the plane with alpha=1")
        if self.kind == ODDPOWER and self.m < 0:
            raise ValueError("oddpower exponent must be >= 0")
        if self.kind == RIESZ and not 0 < self.alpha:
            raise ValueError("riesz exponent must be positive")

    @property
    def label(self) -> str:
        if self.kind == RIESZ:
            return f"riesz:{self.alpha:g}"
        if self.kind == ODDPOWER:
            return f"oddpower:{self.m}"
        return self.kind

    @property
    def harmonic(self) -> bool:
        """True when the Laplacian of the kernel vanishes identically."""
        if self.kind == CAUCHY:
            return True
        if self.kind == ODDPOWER:
            return self.m == 0
        if self.kind == RIESZ:
            return self.alpha == self.d - 1
        return False


def cauchy() -> KernelSpec:
    return KernelSpec(CAUCHY)


def riesz(alpha: float, d: int) -> KernelSpec:
    return KernelSpec(RIESZ, d=d, alpha=float(alpha))


def oddpower(m: int) -> KernelSpec:
    return KernelSpec(ODDPOWER, m=int(m))


def probe() -> KernelSpec:
    return KernelSpec(PROBE)


def parse_kernel(text: str, d: int = 2) -> KernelSpec:
    """Parse ``cauchy | riesz:ALPHA | oddpower:M | probe``."""
    name, _, arg = text.strip().lower().partition(":")
    if name == CAUCHY:
        return cauchy()
    if name == PROBE:
        return probe()
    if name == RIESZ:
        return riesz(float(arg) if arg else 1.0, d)
    if name == ODDPOWER:
        return oddpower(int(arg) if arg else 1)
    raise ValueError(f"unknown kernel {text!r}")


def for_config(text: str, config) -> KernelSpec:
    return parse_kernel(text, config.d)


# --------------------------------------------------------------------------
# evaluation

def _as_complex(x: np.ndarray) -> np.ndarray:
    return x[..., 0] + 1j * x[..., 1]


def _as_vector(z: np.ndarray) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-1)


def kernel_values(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Unchecked vectorized evaluation; ``x`` has shape (..., d)."""
    if spec.kind == RIESZ:
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        return x * r2 ** (-(1.0 + spec.alpha) / 2.0)
    z = _as_complex(x)
    if spec.kind == CAUCHY:
        w = 1.0 / z
    elif spec.kind == ODDPOWER:
        w = np.conj(z) ** spec.m / z ** (spec.m + 1)
    else:
        w = (z + np.conj(z)) / (z * z)
    return _as_vector(w)


def eval_kernel(spec: KernelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.d:
        raise ValueError(f"expected points in R^{spec.d}")
    if np.any(np.all(x == 0.0, axis=-1)):
        raise SingularPoint("kernel evaluated at the origin")
    return kernel_values(spec, x)


def laplacian(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Componentwise Laplacian of the kernel at ``x`` (shape (..., d))."""
    if spec.kind == RIESZ:
        p = 1.0 + spec.alpha
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        return p * (p - spec.d) * x * r2 ** (-(p + 2.0) / 2.0)
    z = _as_complex(x)
    if spec.kind == CAUCHY:
        return np.zeros_like(x)
    if spec.kind == ODDPOWER:
        m = spec.m
        if m == 0:
            return np.zeros_like(x)
        w = -4.0 * m * (m + 1) * np.conj(z) ** (m - 1) / z ** (m + 2)
    else:
        w = -8.0 / z ** 3
    return _as_vector(w)


def _rising(p: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= p + j
    return out


def _wirtinger_bound(m: int, k: int) -> float:
    # sum over a+b=k of binom(k,a) |d^a dbar^b (zbar^m z^-(m+1))| |z|^(1+k)
    total = 0.0
    for a in range(k + 1):
        b = k - a
        if b > m:
            continue
        total += (math.comb(k, a) * math.factorial(m) / math.factorial(m - b)
                  * math.factorial(m + a) / math.factorial(m))
    return total


@lru_cache(maxsize=None)
def derivative_bound(spec: KernelSpec, k: int) -> float:
    """``C_k`` with ``|D^k K(x)[h,...,h]| <= C_k |h|^k |x|^(-alpha-k)``.

    Riesz: along a line the kernel is ``(x + t h) phi(t)`` with ``phi`` a
    Gegenbauer generating function, giving ``(p)_k + k (p)_{k-1}``, ``p = 1+alpha``.
    Complex kernels: Wirtinger expansion of the k-th directional derivative.
    """
    if spec.kind == RIESZ:
        p = 1.0 + spec.alpha
        return _rising(p, k) + (k * _rising(p, k - 1) if k else 0.0)
    if spec.kind == CAUCHY:
        return _wirtinger_bound(0, k)
    if spec.kind == ODDPOWER:
        return _wirtinger_bound(spec.m, k)
    return _wirtinger_bound(0, k) + _wirtinger_bound(1, k)


def laplacian_bound(spec: KernelSpec) -> float:
    """``L`` with ``|Laplacian K(x)| <= L |x|^(-alpha-2)``."""
    if spec.harmonic:
        return 0.0
    return spec.d * derivative_bound(spec, 2)


def far_field_error_bound(spec: KernelSpec, s: float, r: float) -> float:
    """Per-unit-mass error of the one-point (center) rule for a source cube.

    Bounds ``|∫_P K(x-y) dmu(y) - mu(P) K(x - c_P)| / mu(P)`` for a cube of
    side ``s`` whose center is at distance ``r`` from ``x``, for any measure on
    P that is symmetric about ``c_P`` coordinatewise with independent
    coordinates (true of every cube of the Cantor construction):

        A s^2 / r^(2+alpha) + B s^4 / (r - h)^(4+alpha),   h = s sqrt(d)/2,

    with ``A = L/8`` (second moment <= s^2/4 per coordinate, ``L`` the
    Laplacian constant) and ``B = C_4 d^2 / 384`` (fourth-order Taylor
    remainder, ``h^4 = s^4 d^2/16``).  Odd-order terms vanish by symmetry.
    """
    if s < 0 or r <= 0:
        raise ValueError("need s >= 0 and r > 0")
    if r <= s * math.sqrt(spec.d):
        raise NotSeparated(f"r = {r} <= s sqrt(d) = {s * math.sqrt(spec.d)}")
    h = s * math.sqrt(spec.d) / 2
    a = spec.alpha
    second = laplacian_bound(spec) / 8.0 * s * s * r ** (-(2 + a))
    fourth = derivative_bound(spec, 4) / 24.0 * h ** 4 * (r - h) ** (-(4 + a))
    return second + fourth


# --------------------------------------------------------------------------
# symmetry

def _sample_grid(d: int, count: int = 1024) -> np.ndarray:
    # deterministic, well spread, excludes the origin
    rng = np.random.default_rng(20240601)
    x = rng.standard_normal((count, d))
    scale = np.exp(rng.uniform(-2.0, 2.0, size=(count, 1)))
    x = x / np.linalg.norm(x, axis=1, keepdims=True) * scale
    # include the coordinate axes and diagonals exactly
    extra = [np.eye(d), -np.eye(d), np.ones((1, d)), -np.ones((1, d))]
    return np.vstack([x] + extra)


def commutation_sign(spec: KernelSpec, symmetry, tol: float = 1e-12) -> int:
    """Sign ``eps`` with ``K(f x) = eps f(K x)`` for a linear symmetry ``f``.

    ``symmetry`` is a generator id (``"f1"``, ``"f2"``, ``"f3"``) or any object
    with an ``apply(x)`` method.  Returns ``NOT_EQUIVARIANT`` (0) when some
    sample point violates both signs.
    """
    from .geometry import generator

    f = generator(symmetry, spec.d) if isinstance(symmetry, str) else symmetry
    x = _sample_grid(spec.d)
    lhs = kernel_values(spec, f.apply(x))
    rhs = f.apply(kernel_values(spec, x))
    scale = np.maximum(np.linalg.norm(rhs, axis=1), np.linalg.norm(lhs, axis=1))
    scale = np.maximum(scale, 1e-300)
    plus = np.linalg.norm(lhs - rhs, axis=1) <= tol * scale
    minus = np.linalg.norm(lhs + rhs, axis=1) <= tol * scale
    if plus.all():
        return 1
    if minus.all():
        return -1
    return NOT_EQUIVARIANT
