"""S_n and T_n along sample points: bounded increments, different fates.

For the constant-ratio set (a_n = 1) the martingale S_n keeps moving by
about a_n at every generation.  For the set with a_n = 0.8^n the increments
are summable and the trace settles.  Both satisfy |S_n - T_n| <= C a_n.

    python3 demos/02_martingale_dichotomy.py
"""
import numpy as np

from cantorpv import preset
from cantorpv.cantor import corner_points
from cantorpv.kernels import cauchy
from cantorpv.martingale import Evaluator, oscillation, traces

DEPTH = 10

for name in ("garnett", "geo08"):
    config = preset(name)
    ev = Evaluator(config, cauchy(), tol=1e-6)
    points = corner_points(config, 4, DEPTH, seed=3)
    print(f"== {name}: a_n = {np.round(config.densities[:DEPTH + 1], 3)}")
    for tr in traces(ev, points, DEPTH):
        S = tr.S()
        T = np.array([r.T for r in tr.rows])
        steps = np.linalg.norm(np.diff(S, axis=0), axis=1) / config.densities[:DEPTH]
        gaps = np.linalg.norm(S - T, axis=1) / config.densities[:DEPTH + 1]
        print(f"  point {''.join(map(str, tr.point))}: "
              f"max |dS|/a {steps.max():.3f}  max |S-T|/a {gaps.max():.3f}  "
              f"oscillation n>=5 {oscillation(S, 5, DEPTH):.4f}")
    print()
