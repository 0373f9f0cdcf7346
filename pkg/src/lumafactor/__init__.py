"""Material/lighting factorisation by differentiable rendering with a toy
diffusion prior over albedo and ORM maps."""
import os

# the TBB layer shipped with some numba wheels is too old; OpenMP or the
# built-in workqueue are both fine for the per-ray kernels
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
