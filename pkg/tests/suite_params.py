"""Shared settings for the fixture generator and the acceptance suite."""
from cantorpv.kernels import cauchy, riesz

TOL = 1e-6
BOUND_PRESETS = ("garnett", "geo08", "sqrt")
BOUND_POINTS, BOUND_NMAX, BOUND_SEED = 64, 8, 7
RIESZ_NMAX = 6
REL_OUTER, REL_INNER = 3, 6
DRIFT = 0.05
CONV_POINTS, CONV_DEPTH, CONV_SEED, CONV_WINDOW = 16, 12, 8, (6, 12)
STOP_M, STOP_DEPTH, STOP_TOL = 1.0, 12, 1e-4
TRACE_PATHS = 8


def kernel_for(config):
    return cauchy() if config.d == 2 else riesz(config.alpha, config.d)

# the Riesz preset runs its bound sweep at a looser quadrature tolerance:
# certificates stay below 2e-5 against a_6 ~ 0.08
RIESZ_TOL = 1e-4
