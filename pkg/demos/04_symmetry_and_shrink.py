"""Dihedral symmetry of relative martingale values and the shrink inequality.

Moving a sub-cube R of Q by a symmetry of the square moves S_{Q,R} by the
same linear map, up to the kernel's commutation sign.  The Cauchy kernel
picks up a minus sign under the diagonal reflection.

    python3 demos/04_symmetry_and_shrink.py
"""
import math

import numpy as np

from cantorpv import preset
from cantorpv.geometry import SECTOR_120, shrink_check_batch, symmetry_group, transport
from cantorpv.kernels import cauchy, commutation_sign, probe
from cantorpv.martingale import Evaluator

kernel = cauchy()
print("commutation signs (f1, f2, f3):",
      [commutation_sign(kernel, f) for f in ("f1", "f2", "f3")])
print("probe kernel under f3:", commutation_sign(probe(), "f3"), "(0 = not equivariant)")

ev = Evaluator(preset("garnett"), kernel, tol=1e-9)
Q, R = (2,), (2, 1, 3)
base = ev.relative(Q, R).value
print(f"\nS_Q,R for Q={Q}, R={R}: {base}")
for g, word in symmetry_group(2):
    image, eps = transport(kernel, Q, R, g)
    moved = ev.relative(Q, image).value
    err = np.linalg.norm(moved - eps * g.apply(base))
    print(f"  {'.'.join(word) or 'id':20s} -> {image}  sign {eps:+d}  mismatch {err:.1e}")

rng = np.random.default_rng(0)
n = 100_000
z = rng.standard_normal((n, 2))
R = np.linalg.norm(z, axis=1)
ang = np.arctan2(-z[:, 1], -z[:, 0]) + rng.uniform(-SECTOR_120 / 2, SECTOR_120 / 2, n)
r = R * rng.uniform(0, 0.5, n)
w = z + r[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
valid, holds = shrink_check_batch(z, w)
print(f"\nshrink inequality |w| <= |z| - |w-z|/4: {valid.sum()} valid samples, "
      f"{np.count_nonzero(~holds[valid])} violations")
print(f"largest sector half-angle used: {math.degrees(SECTOR_120 / 2):.0f} degrees")
