"""Cross-subject neural action representations from paired pose and calcium imaging."""

import os as _os

# NEUROSWAP_THREADS caps BLAS threads; it only takes effect if set before numpy loads
_threads = _os.environ.get("NEUROSWAP_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"


def max_workers() -> int:
    """Process-level parallelism allowed by NEUROSWAP_THREADS (default 1)."""
    try:
        return max(1, int(_os.environ.get("NEUROSWAP_THREADS", "1")))
    except ValueError:
        return 1
