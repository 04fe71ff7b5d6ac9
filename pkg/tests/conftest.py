"""Shared test environment: single-threaded BLAS for bit-reproducibility.

The env vars must be set before numpy's first import anywhere in the
process, so keep this block at the very top and import nothing heavy here.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
