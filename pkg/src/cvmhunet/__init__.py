"""CPU implementation of a cross-scan visual state-space segmentation network.

The package is organised bottom-up:

- ``tensor`` / ``functional``: numpy autograd engine and neural-net ops
- ``module`` / ``checkpoint``: parameter containers and binary serialization
- ``scan`` / ``ssm``: 2D scan-path generation and the selective-scan recurrence
- ``blocks`` / ``mfms``: the state-space encoder block and the frequency-aware
  skip-fusion block
- ``network``: full encoder/decoder assembly with analytic cost counters
- ``losses`` / ``optim`` / ``metrics`` / ``data``: training stack and file IO
- ``cli``: command-line entry point (``cvmh``)
"""

import os as _os

# CVMH_THREADS caps BLAS thread pools; the knobs only work if they are set
# before numpy loads, so this must stay above every numpy-importing line
_threads = _os.environ.get("CVMH_THREADS")
if _threads:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        _os.environ.setdefault(_var, _threads)

from .tensor import Parameter, Tensor, cat, no_grad  # noqa: E402

__all__ = ["Tensor", "Parameter", "cat", "no_grad"]

__version__ = "0.1.0"
