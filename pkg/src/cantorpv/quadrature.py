"""Integrals of odd kernels against the Cantor measure.

Two routes:

* :func:`brute_force` atomizes mu at generation N (mass ``2**(-dN)`` at each
  cube center) and sums directly; :func:`atomization_bound` certifies the
  distance to the exact integral.
* :func:`treecode` / :func:`pair_interaction` refine the cube hierarchy until
  cells are well separated and accept them through a centered expansion.

Every cube of the construction carries a measure that is symmetric about its
center in each coordinate, with independent coordinates of equal variance
``sigma_n**2``.  Hence the first and third Taylor terms of ``K(x - y)``
integrate to zero and the second integrates to ``sigma_n**2/2 * Laplacian K``.
Accepted cells use ``mu(P) (K(u) + sigma^2/2 Laplacian K(u))`` and are
certified by the fourth-order remainder ``C_4/24 h^4 (|u| - h)^(-alpha-4)``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .cantor import (CantorConfig, CantorError, DepthExceeded, address_index,
                     corner_signs, cube_center, cube_centers)
from .kernels import (KernelSpec, derivative_bound, kernel_values, laplacian)

DEFAULT_ETA = 3.0
MAX_RETRIES = 6
REFINE_BELOW = 6
CHUNK = 128
ROW_LIMIT = 400_000
UNIT_ROUNDOFF = 2.0 ** -53


class QuadratureError(CantorError):
    pass


class SingularHit(QuadratureError):
    pass


class OverlapError(QuadratureError):
    pass


class BudgetExhausted(QuadratureError):
    def __init__(self, result, tol):
        self.result = result
        super().__init__(f"certified bound {result.error_bound:.3e} exceeds "
                         f"tolerance {tol:.3e} at max_generation")


@dataclass(frozen=True)
class IntegralRequest:
    """Integral of ``K(x - y)`` over ``K \\ exclude`` (optionally ``|y - x| > ball``)."""

    x: tuple
    exclude: tuple | None = None
    tol: float = 1e-8
    ball: float = 0.0

    @classmethod
    def make(cls, x, exclude=None, tol=1e-8, ball=0.0):
        ex = None if exclude is None else tuple(int(a) for a in exclude)
        return cls(tuple(float(c) for c in np.asarray(x, dtype=float)), ex,
                   float(tol), float(ball))


@dataclass(frozen=True)
class IntegralResult:
    value: np.ndarray = field(compare=False)
    error_bound: float
    cells_evaluated: int
    depth_used: int

    def to_json(self) -> dict:
        return {"value": [float(v) for v in self.value],
                "error_bound": float(self.error_bound),
                "cells": int(self.cells_evaluated), "depth": int(self.depth_used)}


def default_workers() -> int:
    env = os.environ.get("CANTOR_PV_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# --------------------------------------------------------------------------
# per-config tables

@dataclass(frozen=True)
class _Tables:
    d: int
    G: int
    sides: np.ndarray
    half: np.ndarray       # half diagonals
    steps: np.ndarray      # child-center offsets, index g -> (s_g - s_{g+1})/2
    var: np.ndarray
    mass: np.ndarray
    signs: np.ndarray
    zsum: float            # 2 + sum of densities, initial budget divisor


@lru_cache(maxsize=32)
def _tables(config: CantorConfig) -> _Tables:
    # refinement may continue below max_generation: the lambda tail defines
    # the measure there, and cubes at the addressing cap are often too close
    # to their neighbours for a useful far-field certificate
    G = min(config.max_generation + REFINE_BELOW, 60 // config.d)
    sides = config.sides[: G + 1].copy()
    sq = config.half_steps ** 2
    var = np.append(np.cumsum(sq[::-1])[::-1], 0.0)[: G + 1].copy()
    return _Tables(
        d=config.d, G=G, sides=sides, half=sides * math.sqrt(config.d) / 2,
        steps=config.half_steps[: G + 1].copy(), var=var,
        mass=np.ldexp(1.0, -config.d * np.arange(G + 1)),
        signs=corner_signs(config.d), zsum=2.0 + float(np.sum(config.densities)))


def _expansion(kernel: KernelSpec, u: np.ndarray, var: np.ndarray) -> np.ndarray:
    val = kernel_values(kernel, u)
    if not kernel.harmonic:
        val = val + 0.5 * var[:, None] * laplacian(kernel, u)
    return val


def _remainder(kernel: KernelSpec, h: np.ndarray, rho: np.ndarray) -> np.ndarray:
    c4 = derivative_bound(kernel, 4) / 24.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = c4 * h ** 4 * rho ** (-(kernel.alpha + 4.0))
    return np.where(rho > 0, out, np.inf)


def _rounding(count, abs_sum):
    # accumulated sums of ``count`` terms plus a few ulps per evaluated term
    return (count + 64) * UNIT_ROUNDOFF * abs_sum


def _bincount(index, weights, n):
    return np.bincount(index, weights=weights, minlength=n)


def _chunked(fn, n_items: int, workers: int, chunk: int = CHUNK):
    """Run ``fn(start, stop)`` over fixed-size chunks; results are chunk-ordered.

    Chunk boundaries depend only on ``n_items`` and per-item results never
    depend on them, so any worker count gives identical output.  The chunk
    size also caps the memory of the vectorized passes.
    """
    bounds = [(a, min(a + chunk, n_items)) for a in range(0, n_items, chunk)] or [(0, 0)]
    workers = max(1, int(workers))
    if workers == 1 or len(bounds) == 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


# --------------------------------------------------------------------------
# brute force

@lru_cache(maxsize=4)
def _atoms(config: CantorConfig, N: int) -> np.ndarray:
    return cube_centers(config, N)


def _atom_slice(config, N, exclude):
    n_atoms = 2 ** (config.d * N)
    if exclude is None:
        return n_atoms, None
    e = len(exclude)
    if e > N:
        raise QuadratureError("excluded cube finer than the atomization")
    block = 2 ** (config.d * (N - e))
    start = address_index(exclude, config.d) * block
    return n_atoms, (start, start + block)


def _kept_atoms(config, N, exclude):
    if N > config.max_generation:
        raise DepthExceeded(f"N = {N} > max_generation")
    atoms = _atoms(config, N)
    _, cut = _atom_slice(config, N, exclude)
    if cut is None:
        return atoms
    return np.concatenate([atoms[: cut[0]], atoms[cut[1]:]])


def brute_force(config: CantorConfig, kernel: KernelSpec, request: IntegralRequest,
                N: int) -> np.ndarray:
    """``sum_P 2**(-dN) K(x - c_P)`` over generation-N cubes outside the excluded one.

    Each component is summed in address order with ``math.fsum``.
    """
    atoms = _kept_atoms(config, N, request.exclude)
    if atoms.shape[0] == 0:
        return np.zeros(config.d)
    diff = np.asarray(request.x) - atoms
    if np.any(np.all(diff == 0.0, axis=1)):
        raise SingularHit("target coincides with an atom center")
    if request.ball > 0:
        raise QuadratureError("brute_force does not truncate to a ball")
    vals = kernel_values(kernel, diff)
    total = np.array([math.fsum(vals[:, i]) for i in range(config.d)])
    return total * math.ldexp(1.0, -config.d * N)


def atomization_bound(config: CantorConfig, kernel: KernelSpec,
                      request: IntegralRequest, N: int) -> float:
    """Certified ``|brute_force(N) - exact|``; infinite if some atom is too close.

    Includes the floating-point error of the kernel evaluations (the sums are
    correctly rounded).
    """
    t = _tables(config)
    atoms = _kept_atoms(config, N, request.exclude)
    if atoms.shape[0] == 0:
        return 0.0
    diff = np.asarray(request.x) - atoms
    r = np.linalg.norm(diff, axis=1)
    h = t.half[N]
    rho = r - h
    if np.any(rho <= 0):
        return math.inf
    second = 0.0
    if not kernel.harmonic:
        second = 0.5 * t.var[N] * float(np.sum(np.linalg.norm(laplacian(kernel, diff), axis=1)))
    fourth = float(np.sum(_remainder(kernel, np.full_like(rho, h), rho)))
    rounding = 16 * UNIT_ROUNDOFF * float(np.sum(np.abs(kernel_values(kernel, diff))))
    return (second + fourth + rounding) * math.ldexp(1.0, -config.d * N)


# --------------------------------------------------------------------------
# treecode (point targets)

@dataclass
class _FieldOut:
    value: np.ndarray
    err: np.ndarray       # bound from cells accepted within budget
    forced: np.ndarray    # bound from cells accepted only because depth ran out
    cells: np.ndarray
    depth: np.ndarray


def _field_pass(config, kernel, x, egen, eidx, ball, rel, eta, infinite) -> _FieldOut:
    t = _tables(config)
    d, G = t.d, t.G
    R = x.shape[0]
    alpha = kernel.alpha
    c0 = derivative_bound(kernel, 0)
    out = _FieldOut(np.zeros((R, d)), np.zeros(R), np.zeros(R),
                    np.zeros(R, dtype=np.int64), np.zeros(R, dtype=np.int64))
    if G == 0:
        raise QuadratureError("max_generation 0 leaves nothing to refine")
    nb = 2 ** d
    abs_sum = np.zeros(R)
    req = np.repeat(np.arange(R), nb)
    idx = np.tile(np.arange(nb, dtype=np.int64), R)
    centers = 0.5 + np.tile(t.signs, (R, 1)) * t.steps[0]
    has_e = egen >= 0
    for g in range(1, G + 1):
        if req.size == 0:
            break
        s, h, mu = t.sides[g], t.half[g], t.mass[g]
        eg, ei = egen[req], eidx[req]
        he = has_e[req]
        below = he & (g >= eg)
        shift = np.where(below, d * (g - eg), 0)
        in_e = below & ((idx >> shift) == ei)
        above = he & (g < eg)
        shift_up = np.where(above, d * (eg - g), 0)
        holds_e = above & ((ei >> shift_up) == idx)

        diff = x[req] - centers
        r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        eps = ball[req]
        has_ball = eps > 0
        gap = np.maximum(np.abs(diff) - s / 2, 0.0)
        box = np.sqrt(np.einsum("ij,ij->i", gap, gap))
        far = np.abs(diff) + s / 2
        farthest = np.sqrt(np.einsum("ij,ij->i", far, far))
        in_ball = has_ball & (farthest <= eps)
        on_sphere = has_ball & ~in_ball & (box < eps)

        rho = r - h
        bound = mu * _remainder(kernel, np.full_like(rho, h), rho)
        live = ~(in_e | in_ball)
        candidate = live & ~holds_e & ~on_sphere & (rho > 0)
        if infinite:
            accept = candidate
        else:
            with np.errstate(invalid="ignore", over="ignore"):
                rel_err = bound / mu * r ** alpha
            accept = candidate & (r >= eta * s) & (rel_err <= rel[req])
        refine = live & ~accept
        if g == G:
            layer = refine & on_sphere
            forced = refine & ~on_sphere
            out.forced += _bincount(req[layer], mu * c0 * eps[layer] ** (-alpha), R)
            out.forced += _bincount(req[forced], bound[forced], R)
            take = accept | (forced & (rho > 0))
        else:
            take = accept
        if np.any(take):
            rq = req[take]
            vals = mu * _expansion(kernel, diff[take], np.full(rq.size, t.var[g]))
            for i in range(d):
                out.value[:, i] += _bincount(rq, vals[:, i], R)
            abs_sum += _bincount(rq, np.abs(vals).sum(axis=1), R)
            acc = take & accept
            out.err += _bincount(req[acc], bound[acc], R)
            out.cells += np.bincount(rq, minlength=R)
            out.depth[np.unique(rq)] = g
        if g == G:
            break
        keep = np.flatnonzero(refine)
        req = np.repeat(req[keep], nb)
        idx = (idx[keep][:, None] * nb + np.arange(nb)[None, :]).ravel()
        centers = (centers[keep][:, None, :] + t.signs[None, :, :] * t.steps[g]).reshape(-1, d)
    # rounding does not shrink under refinement, so it sits with the forced part
    out.forced += _rounding(out.cells, abs_sum)
    return out


def _field(config, kernel, x, egen, eidx, ball, tol, eta) -> _FieldOut:
    t = _tables(config)
    infinite = ~np.isfinite(tol)
    rel = np.where(infinite, np.inf, tol / t.zsum)
    res = _field_pass(config, kernel, x, egen, eidx, ball, rel, eta, False)
    if np.any(infinite):
        inf_res = _field_pass(config, kernel, x[infinite], egen[infinite], eidx[infinite],
                              ball[infinite], rel[infinite], eta, True)
        _merge(res, inf_res, np.flatnonzero(infinite))
    for _ in range(MAX_RETRIES):
        total = res.err + res.forced
        redo = np.flatnonzero(np.isfinite(tol) & (total > tol) & (res.forced < 0.5 * tol))
        if redo.size == 0:
            break
        rel[redo] *= np.clip(0.5 * (tol[redo] - res.forced[redo]) / res.err[redo], 1e-6, 0.5)
        sub = _field_pass(config, kernel, x[redo], egen[redo], eidx[redo], ball[redo],
                          rel[redo], eta, False)
        _merge(res, sub, redo)
    return res


def _merge(res: _FieldOut, sub: _FieldOut, where: np.ndarray) -> None:
    res.value[where] = sub.value
    res.err[where] = sub.err
    res.forced[where] = sub.forced
    res.cells[where] = sub.cells
    res.depth[where] = sub.depth


def treecode_batch(config: CantorConfig, kernel: KernelSpec,
                   requests: Sequence[IntegralRequest], eta: float = DEFAULT_ETA,
                   workers: int = 1) -> list[IntegralResult]:
    """Certified integrals for many requests; never raises on exhaustion.

    Callers compare ``error_bound`` with the request tolerance.
    """
    n = len(requests)
    d = config.d
    if n == 0:
        return []
    x = np.array([r.x for r in requests], dtype=float).reshape(n, d)
    egen = np.array([-1 if r.exclude is None else len(r.exclude) for r in requests])
    eidx = np.array([0 if r.exclude is None else address_index(r.exclude, d)
                     for r in requests], dtype=np.int64)
    if np.any(egen > config.max_generation):
        raise DepthExceeded("excluded cube deeper than max_generation")
    ball = np.array([r.ball for r in requests], dtype=float)
    tol = np.array([r.tol for r in requests], dtype=float)
    if np.any(~(tol > 0)):
        raise QuadratureError("tolerance must be positive")

    def run(a, b):
        return _field(config, kernel, x[a:b], egen[a:b], eidx[a:b], ball[a:b], tol[a:b], eta)

    parts = _chunked(run, n, workers)
    out = []
    for part in parts:
        for i in range(part.value.shape[0]):
            out.append(IntegralResult(part.value[i].copy(),
                                      float(part.err[i] + part.forced[i]),
                                      int(part.cells[i]), int(part.depth[i])))
    return out


def treecode(config: CantorConfig, kernel: KernelSpec, request: IntegralRequest,
             eta: float = DEFAULT_ETA) -> IntegralResult:
    """Certified ``∫_{K \\ E} K(x - y) dmu(y)`` with ``error_bound <= request.tol``.

    Raises :class:`BudgetExhausted` (carrying the best result) when the depth
    cap is reached first.
    """
    result = treecode_batch(config, kernel, [request], eta)[0]
    if result.error_bound > request.tol:
        raise BudgetExhausted(result, request.tol)
    return result


# --------------------------------------------------------------------------
# cube-cube interactions

@dataclass(frozen=True)
class PairTask:
    """Accumulate ``scale * ∫_P ∫_R K(z - y) dmu(y) dmu(z)`` into output ``out``."""

    out: int
    P: tuple
    R: tuple


def _pair_pass(config, kernel, out, gP, cP, gR, cR, rel, n_out, eta):
    t = _tables(config)
    d, G = t.d, t.G
    nb = 2 ** d
    alpha = kernel.alpha
    value = np.zeros((n_out, d))
    err = np.zeros(n_out)
    forced_err = np.zeros(n_out)
    count = np.zeros(n_out, dtype=np.int64)
    abs_sum = np.zeros(n_out)
    while out.size:
        if out.size > ROW_LIMIT:
            # finish the front in two halves to bound memory
            half = out.size // 2
            for sl in (slice(0, half), slice(half, None)):
                v, e, f, c = _pair_pass(config, kernel, out[sl], gP[sl], cP[sl], gR[sl], cR[sl],
                                        rel, n_out, eta)
                value += v
                err += e
                forced_err += f
                count += c
            break
        sP, sR = t.sides[gP], t.sides[gR]
        hsum = t.half[gP] + t.half[gR]
        u = cP - cR
        r = np.sqrt(np.einsum("ij,ij->i", u, u))
        rho = r - hsum
        mu2 = t.mass[gP] * t.mass[gR]
        bound = mu2 * _remainder(kernel, hsum, rho)
        with np.errstate(invalid="ignore", over="ignore"):
            rel_err = bound / mu2 * r ** alpha
        accept = (rho > 0) & (r >= eta * np.maximum(sP, sR)) & (rel_err <= rel[out])
        stuck = ~accept & (gP == G) & (gR == G)
        take = accept | (stuck & (rho > 0))
        if np.any(take):
            o = out[take]
            vals = mu2[take, None] * _expansion(kernel, u[take], t.var[gP[take]] + t.var[gR[take]])
            for i in range(d):
                value[:, i] += _bincount(o, vals[:, i], n_out)
            abs_sum += _bincount(o, np.abs(vals).sum(axis=1), n_out)
            err += _bincount(out[accept], bound[accept], n_out)
            count += np.bincount(o, minlength=n_out)
        if np.any(stuck):
            forced_err += _bincount(out[stuck], bound[stuck], n_out)
        rest = ~accept & ~stuck
        if not np.any(rest):
            break
        split_p = rest & (((sP >= sR) & (gP < G)) | (gR == G))
        split_r = rest & ~split_p
        ip, ir = np.flatnonzero(split_p), np.flatnonzero(split_r)
        new_out = np.concatenate([np.repeat(out[ip], nb), np.repeat(out[ir], nb)])
        new_gP = np.concatenate([np.repeat(gP[ip] + 1, nb), np.repeat(gP[ir], nb)])
        new_gR = np.concatenate([np.repeat(gR[ip], nb), np.repeat(gR[ir] + 1, nb)])
        cp_split = (cP[ip][:, None, :] + t.signs[None] * t.steps[gP[ip]][:, None, None]).reshape(-1, d)
        cr_split = (cR[ir][:, None, :] + t.signs[None] * t.steps[gR[ir]][:, None, None]).reshape(-1, d)
        new_cP = np.concatenate([cp_split, np.repeat(cP[ir], nb, axis=0)])
        new_cR = np.concatenate([np.repeat(cR[ip], nb, axis=0), cr_split])
        out, gP, cP, gR, cR = new_out, new_gP, new_cP, new_gR, new_cR
    forced_err += _rounding(count, abs_sum)
    return value, err, forced_err, count


def _pair_solve(config, kernel, tasks_arrays, n_out, tol, scale, eta):
    """Run pair tasks with per-output tolerance on ``scale * sum`` (retry loop)."""
    out, gP, cP, gR, cR = tasks_arrays
    t = _tables(config)
    rel = np.full(n_out, np.inf)
    finite = np.isfinite(tol)
    rel[finite] = tol[finite] / t.zsum
    value, err, forced, count = _pair_pass(config, kernel, out, gP, cP, gR, cR, rel, n_out, eta)
    for _ in range(MAX_RETRIES):
        total = (err + forced) * scale
        redo = np.flatnonzero(finite & (total > tol) & (forced * scale < 0.5 * tol))
        if redo.size == 0:
            break
        rel[redo] *= np.clip(0.5 * (tol[redo] - forced[redo] * scale[redo])
                             / (err[redo] * scale[redo]), 1e-6, 0.5)
        sel = np.isin(out, redo)
        remap = np.full(n_out, -1)
        remap[redo] = np.arange(redo.size)
        v2, e2, f2, c2 = _pair_pass(config, kernel, remap[out[sel]], gP[sel], cP[sel],
                                    gR[sel], cR[sel], rel[redo], redo.size, eta)
        value[redo], err[redo], forced[redo], count[redo] = v2, e2, f2, c2
    return value * scale[:, None], (err + forced) * scale, count


def _task_arrays(config, tasks):
    d = config.d
    centers = {}

    def center(a):
        c = centers.get(a)
        if c is None:
            c = centers[a] = cube_center(config, a)
        return c

    out = np.array([tk.out for tk in tasks], dtype=np.int64)
    gP = np.array([len(tk.P) for tk in tasks], dtype=np.int64)
    gR = np.array([len(tk.R) for tk in tasks], dtype=np.int64)
    cP = np.array([center(tk.P) for tk in tasks], dtype=float).reshape(-1, d)
    cR = np.array([center(tk.R) for tk in tasks], dtype=float).reshape(-1, d)
    return out, gP, cP, gR, cR


def solve_pair_tasks(config: CantorConfig, kernel: KernelSpec, tasks: Sequence[PairTask],
                     n_out: int, tol, scale, eta: float = DEFAULT_ETA, workers: int = 1):
    """Sum pair integrals per output; returns ``(values, bounds, cells)``.

    ``scale[k]`` multiplies output k (e.g. ``1/mu(Q)`` for averages) and the
    tolerance applies to the scaled value.
    """
    tol = np.broadcast_to(np.asarray(tol, dtype=float), (n_out,)).copy()
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (n_out,)).copy()
    G = config.max_generation
    if any(len(tk.P) > G or len(tk.R) > G for tk in tasks):
        raise DepthExceeded("pair task deeper than max_generation")
    tasks = sorted(tasks, key=lambda tk: tk.out)  # stable: keeps per-output order
    starts = np.searchsorted([tk.out for tk in tasks], np.arange(n_out + 1))

    def run(a, b):
        sub = tasks[starts[a]: starts[b]]
        if not sub:
            return np.zeros((b - a, config.d)), np.zeros(b - a), np.zeros(b - a, dtype=np.int64)
        arrays = _task_arrays(config, sub)
        arrays = (arrays[0] - a,) + arrays[1:]
        return _pair_solve(config, kernel, arrays, b - a, tol[a:b], scale[a:b], eta)

    parts = _chunked(run, n_out, workers)
    values = np.concatenate([p[0] for p in parts]).reshape(n_out, config.d)
    bounds = np.concatenate([p[1] for p in parts])
    cells = np.concatenate([p[2] for p in parts])
    return values, bounds, cells


def _check_disjoint(P, R):
    n = min(len(P), len(R))
    if tuple(P[:n]) == tuple(R[:n]):
        raise OverlapError(f"cubes {P} and {R} are nested")


def pair_interaction(config: CantorConfig, kernel: KernelSpec, P: Sequence[int],
                     R: Sequence[int], tol: float = 1e-10, eta: float = DEFAULT_ETA):
    """Certified ``∫_P ∫_R K(z - y) dmu(y) dmu(z)`` for disjoint construction cubes.

    Returns ``(value, error_bound)`` for the unnormalized integral; ``tol``
    applies to the double average (the value divided by ``mu(P) mu(R)``).
    """
    P, R = tuple(P), tuple(R)
    _check_disjoint(P, R)
    mass = math.ldexp(1.0, -config.d * (len(P) + len(R)))
    values, bounds, _ = solve_pair_tasks(config, kernel, [PairTask(0, P, R)], 1, tol,
                                         1.0 / mass, eta)
    return values[0] * mass, float(bounds[0]) * mass
