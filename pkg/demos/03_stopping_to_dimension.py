"""From stopping families to a lower bound on dimension.

Builds a shallow exploratory stopping forest on the planar set, checks its
structure in exact rational arithmetic, then spreads a measure over the
families and verifies its growth bound.  The exponent beta obtained this
way depends on the realized constants of the forest.

    python3 demos/03_stopping_to_dimension.py
"""
from fractions import Fraction

from cantorpv import preset
from cantorpv.hungerford import (build_nu, dimension_bound, from_forest, uniform_system,
                                 verify_growth)
from cantorpv.kernels import cauchy
from cantorpv.stopping import EXPLORATORY, StoppingParams, build_forest, check_forest

config = preset("garnett")
params = StoppingParams(M=1.0, C_emp=0.97, max_depth=8, mode=EXPLORATORY)
forest = build_forest(config, cauchy(), params, tol=1e-4)
checks = check_forest(forest)

print("family sizes:", [len(f) for f in forest.families])
print("disjoint:", checks["disjoint"]["ok"], " min descent gap:", checks["descent"]["min_gap"])
print("min kept coverage per parent:", checks["coverage"]["min"], "(needs >= 1/8)")
print("alternatives:", checks["alternatives"])

nu = build_nu(from_forest(forest))
print(f"\nrealized eps = {nu.eps}, c = {nu.c}, beta = {nu.beta:.4f}")
report = verify_growth(nu, config)
for key in ("mass", "mass_ratio", "consistency", "cube", "ball"):
    print(f"  {key:12s} ok={report[key]['ok']}")

# the uniform system reproduces mu itself and gives the full exponent
uniform = build_nu(uniform_system(2, 5))
print(f"\nuniform system: beta = {uniform.beta}")
print("dimension_bound(1/8, 4^-6) =", dimension_bound(Fraction(1, 8), Fraction(1, 4 ** 6)))
