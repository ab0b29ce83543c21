from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from cantorpv.cantor import preset
from cantorpv.hungerford import (DomainError, FamilySystem, FrostmanMeasure, build_nu,
                                 chain_system, dimension_bound, from_forest, monotone_grid, mu,
                                 nu_of_cube, realized_constants, subtree_masses,
                                 uniform_matches_mu, uniform_system, validate_family_system,
                                 verify_growth)
from cantorpv.kernels import cauchy
from cantorpv.stopping import EXPLORATORY, StoppingParams, build_forest


def two_child_system(depth):
    """Each parent keeps its children 0 and 3: coverage exactly 1/2."""
    fams = [[()]]
    for _ in range(depth):
        fams.append([q + (b,) for q in fams[-1] for b in (0, 3)])
    return FamilySystem(2, fams)


@pytest.fixture(scope="module")
def forest_system():
    params = StoppingParams(1.0, 0.97, 7, EXPLORATORY)
    return from_forest(build_forest(preset("garnett"), cauchy(), params, tol=1e-5))


def test_dimension_bound_examples():
    assert dimension_bound(Fraction(1, 8), Fraction(1, 4 ** 6), 1) == 0.75
    assert dimension_bound(0.3, 0.3) == 0.0
    assert dimension_bound(1, 0.25) == 1.0
    assert dimension_bound(0.5, 1e-300, 1.5) == pytest.approx(1.5, abs=1e-2)
    for c, eps in [(0.5, 1.0), (0.1, 0.2), (1.2, 0.5), (0.5, 0.0)]:
        with pytest.raises(DomainError):
            dimension_bound(c, eps)


@settings(max_examples=200)
@given(st.floats(1e-9, 0.999), st.floats(0.0, 1.0), st.floats(0.1, 3.0))
def test_dimension_bound_range(eps, t, alpha):
    c = eps + t * (1 - eps)
    beta = dimension_bound(c, eps, alpha)
    assert -1e-12 <= beta <= alpha + 1e-12


def test_monotone_grid():
    assert monotone_grid(1.0)["ok"]
    assert monotone_grid(1.5, steps=12)["ok"]


def test_chain_system_keeps_unit_mass():
    nu = build_nu(chain_system(2, (1, 3, 0, 2)))
    assert all(w == 1 for w in nu.weights.values())


def test_uniform_system_is_mu():
    system = uniform_system(2, 4)
    nu = build_nu(system)
    assert (nu.eps, nu.c) == (Fraction(1, 4), Fraction(1))
    assert uniform_matches_mu(nu)
    assert nu.beta == 1.0
    rep = verify_growth(nu, preset("garnett"))
    assert rep["ok"], rep


def test_mass_ratio_equality_case():
    system = two_child_system(5)
    nu = build_nu(system)
    assert nu.c == Fraction(1, 2) and nu.eps == Fraction(1, 4)
    for n, fam in enumerate(system.families):
        for q in fam:
            assert nu.weights[q] / mu(q, 2) == nu.c ** (-n)
    rep = verify_growth(nu, preset("garnett"))
    assert Fraction(rep["mass_ratio"]["max_ratio_over_bound"]) == 1
    assert rep["ok"]


def test_undercovered_parent_is_named():
    fams = [[()], [(0,), (3,)], [(0, 0), (0, 1), (3, 2)]]
    report = validate_family_system(FamilySystem(2, fams), Fraction(1, 4), Fraction(1, 2))
    assert report["a"]["ok"] and report["b"]["ok"]
    assert not report["c"]["ok"]
    assert report["c"]["witness"]["parent"] == [3]


def test_bad_nesting_is_named():
    system = FamilySystem(2, [[()], [(1,)], [(1, 2)]])
    report = validate_family_system(system, Fraction(1, 16), Fraction(1, 8))
    assert not report["b"]["ok"]
    assert report["b"]["witness"]["node"] == [1]


def test_frontier_mass_is_kept():
    fams = [[()], [(0,), (3,)], [(0, 1), (0, 2)]]
    nu = build_nu(FamilySystem(2, fams))
    assert nu.frontier == {(3,): Fraction(1, 2)}
    assert nu.family_total(2) + nu.frontier_before(2) == 1


def test_forest_system(forest_system):
    eps, c = realized_constants(forest_system)
    assert eps <= Fraction(1, 16)   # descent of at least two generations
    report = validate_family_system(forest_system, eps, c)
    assert report["a"]["ok"] and report["b"]["ok"] and report["c"]["ok"]
    nu = build_nu(forest_system)
    for n in range(len(forest_system.families)):
        assert nu.family_total(n) + nu.frontier_before(n) == 1
    masses, _ = subtree_masses(nu)
    assert all(masses[q] == w for q, w in nu.weights.items())
    rep = verify_growth(nu, preset("garnett"), max_centers=16)
    assert rep["ok"], rep


def test_nu_of_cube_spreads_below_leaves():
    nu = build_nu(chain_system(2, (2,)))
    assert nu_of_cube(nu, (2, 1, 1)) == Fraction(1, 16)
    assert nu_of_cube(nu, (1,)) == 0


def test_json_round_trip(forest_system):
    nu = build_nu(forest_system)
    back = FrostmanMeasure.from_json(nu.to_json())
    assert back.weights == nu.weights and back.frontier == nu.frontier
    assert (back.eps, back.c) == (nu.eps, nu.c)
    assert back.system.families == forest_system.families


def test_ball_constant_is_reported():
    nu = build_nu(two_child_system(3))
    rep = verify_growth(nu, preset("garnett"))
    assert rep["ball"]["C"] == pytest.approx(4 ** (rep["beta"] + 2) * rep["cube"]["C"])
    assert rep["ball"]["max_cubes_met"] <= 16
