import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cantorpv.cantor import iter_addresses
from cantorpv.geometry import (ConeTooNarrow, DegenerateSector, NoOctantFits, PreconditionViolated,
                               SECTOR_120, all_regions, cone_aperture, expanded_edges,
                               expansion_angle, generator, identity, in_octant, in_sector,
                               kernel_sign, max_region_angle, octant_in_sector, octant_map,
                               octant_of, orbit, region_extreme_rays, region_in_cone,
                               region_octant, region_of, sector, shrink_check,
                               shrink_check_batch, symmetry_group, transport)
from cantorpv.kernels import cauchy, riesz

rng = np.random.default_rng(17)


def rot(phi):
    return np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])


def test_sector_axis_and_behind():
    z = np.array([0.3, -1.1])
    for theta in (0.1, 1.0, 2.0, 3.0):
        assert in_sector(z / 2, sector(z, theta))
        assert not in_sector(2 * z, sector(z, theta))


def test_sector_boundary():
    z = np.array([1.0, 0.0])
    sec = sector(z, SECTOR_120)
    for sign in (1, -1):
        on = z + rot(sign * math.radians(60)) @ np.array([-0.3, 0.0])
        off = z + rot(sign * (math.radians(60) + 1e-9)) @ np.array([-0.3, 0.0])
        assert in_sector(on, sec)
        assert not in_sector(off, sec)


def test_sector_errors():
    with pytest.raises(DegenerateSector):
        sector((0.0, 0.0), 1.0)
    with pytest.raises(DegenerateSector):
        sector((1.0, 0.0), math.pi)
    with pytest.raises(DegenerateSector):
        in_sector((1.0, 0.0), sector((1.0, 0.0), 1.0))


@settings(max_examples=200)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5),
       st.floats(0.2, 3.0), st.integers(1, 3))
def test_sector_rotation_invariance(a, b, c, e, theta, quarter):
    z, w = np.array([a, b]), np.array([c, e])
    if np.linalg.norm(z) < 1e-3 or np.linalg.norm(w - z) < 1e-3:
        return
    R = np.linalg.matrix_power(np.array([[0.0, -1.0], [1.0, 0.0]]), quarter)
    assert in_sector(w, sector(z, theta)) == in_sector(R @ w, sector(R @ z, theta))


def test_octants_cover_plane():
    for phi in np.linspace(0, 2 * math.pi, 1001)[:-1]:
        v = np.array([math.cos(phi), math.sin(phi)])
        j = octant_of(v)
        assert 1 <= j <= 8 and in_octant(v, j)


def test_octant_in_sector_examples():
    mid = math.radians(22.5)
    assert octant_in_sector(sector(-np.array([math.cos(mid), math.sin(mid)]), SECTOR_120)) == 1
    assert octant_in_sector(sector((-1.0, 0.0), SECTOR_120)) == 1
    assert octant_in_sector(sector((0.0, -1.0), SECTOR_120)) == 2
    with pytest.raises(NoOctantFits):
        octant_in_sector(sector((1.0, 0.0), math.radians(74)))


def test_octant_in_sector_random_axes():
    for phi in rng.uniform(0, 2 * math.pi, 10_000):
        z = -np.array([math.cos(phi), math.sin(phi)]) * rng.uniform(0.1, 10)
        sec = sector(z, SECTOR_120)
        j = octant_in_sector(sec)
        for e in expanded_edges(j):
            assert in_sector(z + e, sec)


def test_generators_and_group():
    assert generator("f1").apply((2.0, 3.0)).tolist() == [-2.0, 3.0]
    assert generator("f2").apply((2.0, 3.0)).tolist() == [2.0, -3.0]
    assert generator("f3").apply((2.0, 3.0)).tolist() == [3.0, 2.0]
    assert len(symmetry_group(2)) == 8
    assert len(symmetry_group(3)) == 48
    assert symmetry_group(2)[0][0] == identity(2)


def test_octant_maps():
    for j in range(1, 9):
        for k in range(1, 9):
            g = octant_map(j, k)
            mid = (j - 0.5) * math.pi / 4
            v = g.apply([math.cos(mid), math.sin(mid)])
            assert octant_of(v) == k
        assert octant_map(j, j) == identity(2)


def test_transport_signs():
    k = cauchy()
    for j in range(1, 9):
        assert transport(k, (1,), (1, 2, 3), j, j) == ((1, 2, 3), 1)
    image, eps = transport(k, (), (1,), generator("f3"))
    assert eps == -1 and image == (2,)
    assert transport(riesz(1.0, 2), (), (1,), generator("f3"))[1] == 1


def test_group_closure_on_addresses():
    k = cauchy()
    group = [g for g, _ in symmetry_group(2)]
    R = (0, 1, 3, 2)
    for g, h in itertools.product(group, group):
        mid, e1 = transport(k, (0,), R, h)
        img, e2 = transport(k, (0,), mid, g)
        direct, e = transport(k, (0,), R, g.compose(h))
        assert img == direct and e1 * e2 == e


def test_group_acts_consistently_on_points_and_digits():
    # the digit action is the geometric action about the cube center
    from cantorpv.cantor import cube_center, preset
    cfg = preset("geo08")
    for g, _ in symmetry_group(2):
        for R in [(0, 1), (3, 2, 1), (2,)]:
            moved = g.recentered((0.5, 0.5), cube_center(cfg, R))
            np.testing.assert_allclose(moved, cube_center(cfg, g.act_on_address(R)), atol=1e-15)


@pytest.mark.parametrize("d", [2, 3])
def test_measure_invariance_exhaustive(d):
    for g, _ in symmetry_group(d):
        for n in range(1, 4 if d == 2 else 3):
            addrs = list(iter_addresses(d, n))
            assert sorted(g.act_on_address(a) for a in addrs) == addrs


def test_kernel_sign_of_words():
    k = cauchy()
    f1, f2, f3 = (generator(n) for n in ("f1", "f2", "f3"))
    assert kernel_sign(k, f1) == 1 and kernel_sign(k, f2) == 1 and kernel_sign(k, f3) == -1
    assert kernel_sign(k, f3.compose(f1)) == -1
    assert kernel_sign(k, f3.compose(f3)) == 1
    # equivariance holds for every group element with its sign
    x = rng.standard_normal((50, 2))
    from cantorpv.kernels import eval_kernel
    for g, _ in symmetry_group(2):
        np.testing.assert_allclose(eval_kernel(k, g.apply(x)),
                                   kernel_sign(k, g) * g.apply(eval_kernel(k, x)), rtol=1e-13)


def test_orbit_has_eight_distinct_images_for_generic_R():
    imgs = {img for img, _ in orbit((2,), (2, 0, 1))}
    assert len(imgs) == 8


def test_shrink_axis_case():
    z = np.array([0.6, -0.8])
    for t in (0.01, 0.2, 0.49):
        assert shrink_check(z, z * (1 - t))


def test_shrink_extremal_edge():
    # w on the 60 degree edge at distance r = R/2: |w|^2 = r^2 + R^2 - rR exactly
    R = 1.0
    r = R / 2
    z = np.array([R, 0.0])
    w = z + r * np.array([-math.cos(math.radians(60)), math.sin(math.radians(60))])
    assert abs(w @ w - (r * r + R * R - r * R)) <= 1e-12
    slack = (R - r / 4) ** 2 - (r * r + R * R - r * R)
    assert slack == pytest.approx(R * R / 64, abs=1e-12)


def test_shrink_precondition():
    with pytest.raises(PreconditionViolated):
        shrink_check((1.0, 0.0), (0.2, 0.0))
    with pytest.raises(PreconditionViolated):
        shrink_check((1.0, 0.0), (1.1, 0.0))


def test_shrink_random_batch():
    n = 200_000
    R = np.exp(rng.uniform(-3, 3, n))
    phi = rng.uniform(0, 2 * math.pi, n)
    z = R[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    r = R * rng.uniform(0, 0.5, n)
    off = rng.uniform(-math.radians(60), math.radians(60), n)
    ang = phi + math.pi + off
    w = z + r[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    valid, holds = shrink_check_batch(z, w)
    assert valid.mean() > 0.99
    assert np.all(holds[valid])


def test_regions_plane_match_octants():
    assert region_octant(region_of((2.0, 1.0))) == 1
    for j in range(1, 9):
        mid = (j - 0.5) * math.pi / 4
        assert region_octant(region_of((math.cos(mid), math.sin(mid)))) == j


def test_region_of_examples():
    reg = region_of((1.0, 2.0, 3.0))
    assert reg.signs == (1, 1, 1) and reg.perm == (0, 1, 2)
    reg = region_of((-3.0, 1.0, -2.0))
    assert reg.signs == (-1, 1, -1) and reg.perm == (1, 2, 0)
    assert region_of((1.0, 1.0)).perm == (0, 1)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_regions_cover_and_max_angle(d):
    assert len(all_regions(d)) == 2 ** d * math.factorial(d)
    n = 1_000_000 if d == 2 else 300_000
    u = np.sort(np.abs(rng.standard_normal((n, d))), axis=1)
    v = np.sort(np.abs(rng.standard_normal((n, d))), axis=1)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    worst = float(np.max(np.arccos(np.clip(np.einsum("ij,ij->i", u, v), -1, 1))))
    assert worst <= max_region_angle(d) + 1e-9
    rays = region_extreme_rays(region_of(np.arange(1.0, d + 1)))
    assert math.acos(rays[0] @ rays[-1]) == pytest.approx(max_region_angle(d), abs=1e-12)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_region_in_cone(d):
    theta, gamma = cone_aperture(d), expansion_angle(d)
    assert gamma > 0
    for axis in rng.standard_normal((2000, d)):
        reg = region_in_cone(axis)
        assert reg == region_of(axis)
        u = axis / np.linalg.norm(axis)
        for ray in region_extreme_rays(reg):
            assert math.acos(min(1.0, ray @ u)) + gamma <= theta / 2 + 1e-12
    with pytest.raises(ConeTooNarrow):
        region_in_cone(np.ones(d) + np.eye(d)[0] * 0.01, theta=math.radians(20))
