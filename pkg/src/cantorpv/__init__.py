"""Principal values of odd singular integrals on corner Cantor sets."""
from .cantor import (BoundViolation, CantorConfig, Cube, DepthExceeded, EnvelopeSeq,
                     NotNearSet, cube_of, density, envelope, envelope_seq, locate,
                     make_config, preset, sample_point)
from .kernels import KernelSpec, cauchy, eval_kernel, oddpower, parse_kernel, probe, riesz

__version__ = "0.1.0"

__all__ = ["BoundViolation", "CantorConfig", "Cube", "DepthExceeded", "EnvelopeSeq",
           "NotNearSet", "cube_of", "density", "envelope", "envelope_seq", "locate",
           "make_config", "preset", "sample_point", "KernelSpec", "cauchy", "eval_kernel",
           "oddpower", "parse_kernel", "probe", "riesz"]
