"""Sectors, octants, lattice symmetries and their action on cube addresses."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

# slack for boundary cases of the closed sector/octant conditions
ANGLE_TOL = 1e-12


class DegenerateSector(ValueError):
    pass


class NoOctantFits(ValueError):
    pass


class PreconditionViolated(ValueError):
    pass


class ConeTooNarrow(ValueError):
    pass


# --------------------------------------------------------------------------
# sectors

@dataclass(frozen=True)
class Sector:
    """Cone with vertex ``z`` and aperture ``theta`` whose axis points from z to 0."""

    vertex: tuple
    theta: float

    def __post_init__(self):
        z = np.asarray(self.vertex, dtype=float)
        if not np.any(z):
            raise DegenerateSector("sector vertex must be nonzero")
        if not 0 < self.theta < math.pi:
            raise DegenerateSector("aperture must lie in (0, pi)")

    @property
    def axis(self) -> np.ndarray:
        z = np.asarray(self.vertex, dtype=float)
        return -z / np.linalg.norm(z)


def sector(z, theta: float) -> Sector:
    return Sector(tuple(float(c) for c in np.asarray(z, dtype=float)), float(theta))


def in_sector(w, sec: Sector, tol: float = ANGLE_TOL) -> bool:
    """``<(w-z)/|w-z|, -z/|z|> >= cos(theta/2)`` (closed, up to ``tol``)."""
    w = np.asarray(w, dtype=float)
    diff = w - np.asarray(sec.vertex)
    norm = np.linalg.norm(diff)
    if norm == 0:
        raise DegenerateSector("w coincides with the vertex")
    return bool(diff @ sec.axis / norm >= math.cos(sec.theta / 2) - tol)


# --------------------------------------------------------------------------
# plane octants

OCTANT_WIDTH = math.pi / 4
EXPANSION = math.radians(15.0)  # expanded octants span 75 degrees


def octant_of(w) -> int:
    """Octant ``j in 1..8`` containing direction ``w``; boundary goes to the lower j."""
    x, y = float(w[0]), float(w[1])
    if x == 0 and y == 0:
        raise DegenerateSector("zero vector has no octant")
    phi = math.atan2(y, x) % (2 * math.pi)
    j = int(phi // OCTANT_WIDTH) + 1
    j = min(j, 8)
    # a direction exactly on the lower edge also belongs to octant j-1
    if j > 1 and abs(phi - (j - 1) * OCTANT_WIDTH) <= ANGLE_TOL:
        return j - 1
    if j == 1 and abs(phi) <= ANGLE_TOL:
        return 1
    return j


def in_octant(w, j: int, expand: float = 0.0) -> bool:
    x, y = float(w[0]), float(w[1])
    phi = math.atan2(y, x)
    mid = (j - 0.5) * OCTANT_WIDTH
    off = (phi - mid + math.pi) % (2 * math.pi) - math.pi
    return abs(off) <= OCTANT_WIDTH / 2 + expand + ANGLE_TOL


def _direction(phi: float) -> np.ndarray:
    return np.array([math.cos(phi), math.sin(phi)])


def expanded_edges(j: int) -> tuple[np.ndarray, np.ndarray]:
    lo = (j - 1) * OCTANT_WIDTH - EXPANSION
    hi = j * OCTANT_WIDTH + EXPANSION
    return _direction(lo), _direction(hi)


def octant_in_sector(sec: Sector) -> int:
    """Smallest ``j`` whose 75-degree expanded octant at the vertex lies in ``sec``.

    The expanded octant is a convex cone of aperture < pi, so containment is
    decided by its two edge rays.
    """
    if len(sec.vertex) != 2:
        raise ValueError("octants are defined in the plane")
    need = math.cos(sec.theta / 2) - ANGLE_TOL
    for j in range(1, 9):
        if all(e @ sec.axis >= need for e in expanded_edges(j)):
            return j
    raise NoOctantFits(f"no expanded octant fits in an aperture of "
                       f"{math.degrees(sec.theta):.3f} degrees")


# --------------------------------------------------------------------------
# signed permutations

@dataclass(frozen=True)
class Symmetry:
    """Linear isometry ``y_i = signs[i] * x[perm[i]]``."""

    perm: tuple
    signs: tuple

    @property
    def d(self) -> int:
        return len(self.perm)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x[..., list(self.perm)] * np.asarray(self.signs, dtype=float)

    def matrix(self) -> np.ndarray:
        m = np.zeros((self.d, self.d))
        for i, (p, s) in enumerate(zip(self.perm, self.signs)):
            m[i, p] = s
        return m

    def compose(self, other: "Symmetry") -> "Symmetry":
        """``self o other``."""
        perm = tuple(other.perm[p] for p in self.perm)
        signs = tuple(s * other.signs[p] for s, p in zip(self.signs, self.perm))
        return Symmetry(perm, signs)

    def act_on_digit(self, digit: int) -> int:
        # reflection through the cube center flips the corner bit
        out = 0
        for i, (p, s) in enumerate(zip(self.perm, self.signs)):
            bit = (digit >> p) & 1
            if s < 0:
                bit ^= 1
            out |= bit << i
        return out

    def act_on_address(self, digits: Sequence[int]) -> tuple:
        return tuple(self.act_on_digit(int(b)) for b in digits)

    def recentered(self, center, x) -> np.ndarray:
        """``f_Q(x) = f(x - c_Q) + c_Q``."""
        c = np.asarray(center, dtype=float)
        return self.apply(np.asarray(x, dtype=float) - c) + c


def identity(d: int) -> Symmetry:
    return Symmetry(tuple(range(d)), (1,) * d)


def generator(name: str, d: int = 2) -> Symmetry:
    """``f1``: negate x_1; ``f2``: negate x_2; ``f3``: swap x_1, x_2.

    In R^d also ``flipK`` (negate coordinate K, 0-based) and ``swapK_L``.
    """
    if name == "f1":
        name = "flip0"
    elif name == "f2":
        name = "flip1"
    elif name == "f3":
        name = "swap0_1"
    if name.startswith("flip"):
        i = int(name[4:])
        if not 0 <= i < d:
            raise ValueError(f"{name} undefined in R^{d}")
        signs = [1] * d
        signs[i] = -1
        return Symmetry(tuple(range(d)), tuple(signs))
    if name.startswith("swap"):
        i, j = (int(t) for t in name[4:].split("_"))
        if not (0 <= i < d and 0 <= j < d) or i == j:
            raise ValueError(f"{name} undefined in R^{d}")
        perm = list(range(d))
        perm[i], perm[j] = j, i
        return Symmetry(tuple(perm), (1,) * d)
    raise ValueError(f"unknown symmetry {name!r}")


def generator_names(d: int) -> list[str]:
    return [f"flip{i}" for i in range(d)] + [f"swap{i}_{i + 1}" for i in range(d - 1)]


@lru_cache(maxsize=None)
def symmetry_group(d: int) -> tuple:
    """All signed permutations of R^d, each with a generator word.

    Returns ``((Symmetry, word), ...)`` with the identity first; words are
    shortest in the generators of :func:`generator_names` (BFS order).
    """
    gens = [(name, generator(name, d)) for name in generator_names(d)]
    start = identity(d)
    seen = {start: ()}
    frontier = [start]
    while frontier:
        nxt = []
        for g in frontier:
            for name, h in gens:
                gh = h.compose(g)
                if gh not in seen:
                    seen[gh] = seen[g] + (name,)
                    nxt.append(gh)
        frontier = nxt
    return tuple(seen.items())


def kernel_sign(spec, g: Symmetry) -> int:
    """``eps`` of a group element: product of generator commutation signs."""
    word = dict(symmetry_group(g.d))[g]
    eps = 1
    for name in word:
        eps *= _generator_sign(spec, name)
    return eps


@lru_cache(maxsize=None)
def _generator_sign(spec, name: str) -> int:
    from .kernels import NOT_EQUIVARIANT, commutation_sign

    s = commutation_sign(spec, generator(name, spec.d))
    if s == NOT_EQUIVARIANT:
        raise ValueError(f"{spec.label} is not equivariant under {name}")
    return s


def octant_map(j: int, k: int) -> Symmetry:
    """The unique plane symmetry mapping octant ``j`` onto octant ``k``."""
    mid = _direction((j - 0.5) * OCTANT_WIDTH)
    target = (k - 0.5) * OCTANT_WIDTH
    for g, _ in symmetry_group(2):
        v = g.apply(mid)
        if abs(math.atan2(v[1], v[0]) % (2 * math.pi) - target) < 1e-9:
            return g
    raise AssertionError("dihedral group does not act transitively")  # pragma: no cover


def transport(spec, Q: Sequence[int], R: Sequence[int], j, k=None):
    """Image address of ``f_{Q,j,k}(R)`` and the sign ``eps_{j,k}``.

    ``j, k`` are plane octants (1..8); alternatively pass a :class:`Symmetry`
    as ``j`` and leave ``k`` unset.  The map acts on the digits of R below Q
    by bit flips and bit permutations, so no floating point is involved.
    """
    Q, R = tuple(Q), tuple(R)
    if R[: len(Q)] != Q or len(R) <= len(Q):
        raise ValueError("R must be a proper sub-cube of Q")
    g = j if isinstance(j, Symmetry) else octant_map(j, k)
    image = Q + g.act_on_address(R[len(Q):])
    return image, kernel_sign(spec, g)


def orbit(Q: Sequence[int], R: Sequence[int], d: int = 2) -> list[tuple]:
    """``[(image address, Symmetry), ...]`` over the whole group, group order."""
    Q, R = tuple(Q), tuple(R)
    return [(Q + g.act_on_address(R[len(Q):]), g) for g, _ in symmetry_group(d)]


# --------------------------------------------------------------------------
# shrink inequality

SECTOR_120 = math.radians(120.0)


def shrink_check(z, w) -> bool:
    """``|w| <= |z| - |w-z|/4`` for ``w in sigma(z, 120 deg)``, ``0 < |w-z| < |z|/2``."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    r = float(np.linalg.norm(w - z))
    R = float(np.linalg.norm(z))
    if R == 0 or not 0 < r < R / 2:
        raise PreconditionViolated("need 0 < |w - z| < |z|/2")
    if not in_sector(w, sector(z, SECTOR_120)):
        raise PreconditionViolated("w is not in the 120 degree sector at z")
    return bool(np.linalg.norm(w) <= R - r / 4)


def shrink_check_batch(z: np.ndarray, w: np.ndarray):
    """Vectorized form: returns ``(valid, holds)`` boolean arrays."""
    diff = w - z
    r = np.linalg.norm(diff, axis=-1)
    R = np.linalg.norm(z, axis=-1)
    cosang = np.einsum("...i,...i->...", diff, -z) / (r * R)
    valid = (r > 0) & (r < R / 2) & (cosang >= math.cos(SECTOR_120 / 2))
    holds = np.linalg.norm(w, axis=-1) <= R - r / 4
    return valid, holds


# --------------------------------------------------------------------------
# d-dimensional regions

@dataclass(frozen=True)
class RegionId:
    """``{x : signs*x >= 0, |x_perm[0]| <= ... <= |x_perm[d-1]|}``."""

    signs: tuple
    perm: tuple


def region_of(v) -> RegionId:
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ValueError("zero vector has no region")
    signs = tuple(1 if c >= 0 else -1 for c in v)
    # stable sort: ties keep the identity order
    perm = tuple(int(i) for i in np.argsort(np.abs(v), kind="stable"))
    return RegionId(signs, perm)


_PLANE_REGIONS = {
    ((1, 1), (1, 0)): 1, ((1, 1), (0, 1)): 2,
    ((-1, 1), (0, 1)): 3, ((-1, 1), (1, 0)): 4,
    ((-1, -1), (1, 0)): 5, ((-1, -1), (0, 1)): 6,
    ((1, -1), (0, 1)): 7, ((1, -1), (1, 0)): 8,
}


def region_octant(region: RegionId) -> int:
    return _PLANE_REGIONS[(region.signs, region.perm)]


def region_extreme_rays(region: RegionId) -> np.ndarray:
    """Generators of the cone: sums of the largest 1..d coordinates (with signs)."""
    d = len(region.perm)
    rays = []
    for t in range(1, d + 1):
        v = np.zeros(d)
        for idx in region.perm[d - t:]:
            v[idx] = region.signs[idx]
        rays.append(v / np.linalg.norm(v))
    return np.array(rays)


def max_region_angle(d: int) -> float:
    return math.acos(d ** -0.5)


def cone_aperture(d: int) -> float:
    """Artifact choice ``theta(d) = pi - pi/(4 d)``."""
    return math.pi - math.pi / (4 * d)


def expansion_angle(d: int) -> float:
    """Artifact choice ``gamma(d)``: half the slack left by ``theta(d)/2``."""
    return (cone_aperture(d) / 2 - max_region_angle(d)) / 2


def region_in_cone(axis, theta: float | None = None, gamma: float | None = None) -> RegionId:
    """Region containing ``axis`` whose ``gamma``-expansion lies in the cone."""
    axis = np.asarray(axis, dtype=float)
    d = axis.size
    theta = cone_aperture(d) if theta is None else theta
    gamma = expansion_angle(d) if gamma is None else gamma
    region = region_of(axis)
    u = axis / np.linalg.norm(axis)
    worst = max(math.acos(min(1.0, float(r @ u))) for r in region_extreme_rays(region))
    if worst + gamma > theta / 2 + ANGLE_TOL or worst + gamma >= math.pi / 2:
        raise ConeTooNarrow(f"region spans {math.degrees(worst):.3f} deg from the axis; "
                            f"with gamma it exceeds theta/2 = {math.degrees(theta / 2):.3f}")
    return region


def all_regions(d: int) -> list[RegionId]:
    return [RegionId(s, p) for s in itertools.product((1, -1), repeat=d)
            for p in itertools.permutations(range(d))]
