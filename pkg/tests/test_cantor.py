import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cantorpv.cantor import (BoundViolation, CantorError, DepthExceeded, NotNearSet,
                             config_from_json, corner_signs, cube_center, cube_centers,
                             cube_of, density, envelope, envelope_seq, index_address,
                             address_index, is_prefix, iter_addresses, locate, make_config,
                             point_address, preset, sample_point)


def lower_corner_oracle(lams, address):
    """Walk the corner offsets with exact fractions."""
    d = 2
    lower = [Fraction(0)] * d
    side = Fraction(1)
    for k, digit in enumerate(address):
        child = side * Fraction(lams[k])
        for i in range(d):
            if (digit >> i) & 1:
                lower[i] += side - child
        side = child
    return lower, side


def test_garnett_is_valid_with_unit_densities(garnett):
    assert garnett.d == 2 and garnett.alpha == 1.0
    for n in range(garnett.max_generation + 1):
        assert density(garnett, n) == 1.0


def test_lambda_above_half_names_first_index():
    with pytest.raises(BoundViolation) as err:
        make_config(2, 1.0, 0.6)
    assert err.value.n == 1


def test_table_violation_names_offending_index():
    with pytest.raises(BoundViolation) as err:
        make_config(2, 1.0, {"kind": "table", "values": [0.25, 0.3, 0.2, 0.25]}, 4)
    assert err.value.n == 3


def test_subcritical_allowed_only_on_request():
    with pytest.raises(BoundViolation):
        make_config(2, 1.0, 0.2, 4)
    cfg = make_config(2, 1.0, 0.2, 4, allow_subcritical=True)
    assert density(cfg, 4) > 1


def test_sqrt_formula_density():
    cfg = preset("sqrt")
    s = Fraction(1)
    for n in range(1, cfg.max_generation + 1):
        lam = 0.25 * math.sqrt((n + 1) / n)
        s *= Fraction(lam)
        direct = 1.0 / (4 ** n * float(s))
        assert density(cfg, n) == pytest.approx(direct, rel=1e-14)
        assert density(cfg, n) == pytest.approx((n + 1) ** -0.5, rel=1e-13)
        ratio = density(cfg, n) / density(cfg, n - 1)
        assert ratio == pytest.approx(1 / (4 * cfg.lam(n)), rel=1e-14)


def test_geo08_density_values(geo08):
    assert density(geo08, 3) == pytest.approx(0.512, rel=1e-14)
    assert density(geo08, 0) == 1.0


def test_unit_cube():
    cfg = preset("garnett")
    q = cube_of(cfg, ())
    assert q.center == (0.5, 0.5) and q.side == 1.0 and q.measure == 1


def test_first_corner_square():
    q = cube_of(preset("garnett"), [0])
    assert q.side == 0.25
    assert q.center == (0.125, 0.125)


def test_depth_two_center_against_offset_walk(garnett):
    q = cube_of(garnett, [3, 0])
    lower, side = lower_corner_oracle([0.25, 0.25], [3, 0])
    assert q.side == 1 / 16
    assert q.center == tuple(float(l + side / 2) for l in lower)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=0, max_size=12),
       st.sampled_from(["garnett", "geo08", "sqrt"]))
def test_centers_match_exact_walk(address, name):
    cfg = preset(name)
    lower, side = lower_corner_oracle(cfg.lambdas, address)
    expect = [float(l + side / 2) for l in lower]
    # floats round each side once, so allow a couple of ulps at scale 1
    np.testing.assert_allclose(cube_center(cfg, address), expect, rtol=0, atol=4e-16)
    assert cfg.side(len(address)) == pytest.approx(float(side), rel=4e-16)


def test_depth_exceeded(garnett):
    with pytest.raises(DepthExceeded):
        cube_of(garnett, [0] * 13)


def test_measures_sum_to_one_exactly():
    cfg = preset("garnett")
    for n in range(5):
        assert sum(cube_of(cfg, a).measure for a in iter_addresses(2, n)) == 1


def test_sides_are_correctly_rounded_products():
    cfg = preset("sqrt")
    for n in range(1, cfg.max_generation + 1):
        ratio = cfg.side(n) / cfg.side(n - 1)
        assert abs(ratio - cfg.lam(n)) <= 2 * np.spacing(cfg.lam(n))
        assert cfg.side(n) < cfg.side(n - 1)
        assert 0 < density(cfg, n) <= 1


def test_prefix_duality_exhaustive_to_depth_four():
    # containment of closed boxes vs prefix order, all pairs up to depth 4
    cfg = preset("geo08")
    addrs = [a for n in range(4) for a in iter_addresses(2, n)]
    boxes = {a: (np.array(cube_center(cfg, a)), cfg.side(len(a))) for a in addrs}
    for p in addrs:
        cp, sp = boxes[p]
        for q in addrs:
            cq, sq = boxes[q]
            inside = np.all(np.abs(cq - cp) + sq / 2 <= sp / 2 + 1e-15)
            assert inside == is_prefix(p, q)


def test_prefix_duality_depth_six_by_index():
    # at depth 6 check the index arithmetic that the treecode relies on
    for i in range(0, 4 ** 6, 97):
        a = index_address(i, 6, 2)
        assert address_index(a, 2) == i
        for m in range(7):
            assert index_address(i >> (2 * (6 - m)), m, 2) == a[:m]


def test_envelope_nonincreasing_and_formula(geo08):
    b = envelope_seq(geo08, 2.0)
    a = geo08.densities
    for n in range(len(b)):
        assert b[n] == pytest.approx(2.0 * max(a[n:]), rel=0)
    assert all(x >= y for x, y in zip(b.values, b.values[1:]))
    assert envelope(geo08, 2.0, 3) == b[3]
    with pytest.raises(CantorError):
        envelope_seq(geo08, 0.0)


def test_origin_is_in_every_set():
    for name in ("garnett", "geo08", "sqrt", "riesz-d3"):
        cfg = preset(name)
        p = sample_point(cfg, [0] * 6, 6)
        assert np.all(p == 0)


def test_locate_origin(garnett):
    assert locate(garnett, (0.0, 0.0), 5) == (0, 0, 0, 0, 0)


def test_sample_point_against_base_expansion(garnett):
    digits = [3, 1, 2, 0, 2, 1]
    x = sample_point(garnett, digits, 6)
    s = [Fraction(1, 4 ** k) for k in range(8)]
    expect = []
    for i in range(2):
        v = sum(((digit >> i) & 1) * (s[k] - s[k + 1]) for k, digit in enumerate(digits))
        v += ((digits[-1] >> i) & 1) * s[6]
        expect.append(float(v))
    assert tuple(x) == tuple(expect)


def test_not_near_set(garnett):
    with pytest.raises(NotNearSet):
        locate(garnett, (0.5, 0.5), 6)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=8), st.sampled_from(["garnett", "geo08"]))
def test_corners_locate_to_prefixes(address, name):
    cfg = preset(name)
    n = len(address)
    center = np.array(cube_center(cfg, address))
    for sign in corner_signs(2):
        corner = center + sign * cfg.side(n) / 2
        for m in range(n + 1):
            assert locate(cfg, corner, m) == tuple(address[:m])


def test_point_address_repeats_last_digit():
    assert point_address((1, 2), 4) == (1, 2, 2, 2)
    assert point_address((), 2) == (0, 0)


def test_cube_centers_in_address_order(geo08):
    centers = cube_centers(geo08, 3)
    for i in range(0, 64, 7):
        np.testing.assert_array_equal(centers[i], cube_center(geo08, index_address(i, 3, 2)))


def test_config_json_round_trip():
    doc = {"d": 2, "alpha": 1.0, "lambda": {"kind": "table", "values": [0.25, 0.3]},
           "max_generation": 5}
    cfg = config_from_json(doc)
    assert cfg.lam(5) == 0.3
    assert config_from_json(cfg.to_json()) == cfg


def test_riesz_preset_bounds():
    cfg = preset("riesz-d3")
    assert cfg.d == 3 and cfg.alpha == 1.5
    lam = cfg.lam(1)
    assert 2 ** (-3 / 1.5) <= lam < 0.5
    assert all(0 < density(cfg, n) <= 1 for n in range(cfg.max_generation + 1))
