"""Thin access to POT's network simplex without loading its array backends."""

import os

# POT probes torch/jax/tensorflow at import time; none of them are used here.
for _name in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_name}", "1")

from ot.lp.emd_wrap import emd_c  # noqa: E402

OPTIMAL = 1
MAX_ITER = 10_000_000

__all__ = ["emd_c", "OPTIMAL", "MAX_ITER"]
