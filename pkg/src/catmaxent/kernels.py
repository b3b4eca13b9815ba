"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``CATMAXENT_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CATMAXENT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

_I64 = np.int64


def _i64(a):
    return np.ascontiguousarray(a, dtype=_I64)


def inclusion_exclusion(cum, order, desc_ptr, desc_idx):
    """Block masses from cumulative masses: ``out[b] = cum[b] - sum(out[desc(b)])``.

    ``cum`` is ``(n_blocks, k)``; ``order`` must list every block after all
    of its descendants.
    """
    cum = np.ascontiguousarray(cum, dtype=np.float64)
    return _impl.inclusion_exclusion(cum, _i64(order), _i64(desc_ptr), _i64(desc_idx))


def constraint_sums(weights, mem_ptr, mem_idx):
    return _impl.constraint_sums(
        np.ascontiguousarray(weights, dtype=np.float64), _i64(mem_ptr), _i64(mem_idx)
    )


def scaling_sweep(weights, log_u, targets, mem_ptr, mem_idx):
    """In-place scaling sweep; ``weights`` and ``log_u`` must be float64 contiguous."""
    return int(
        _impl.scaling_sweep(
            weights, log_u, np.ascontiguousarray(targets, dtype=np.float64),
            _i64(mem_ptr), _i64(mem_idx),
        )
    )


def match_patterns(rows, pat_ptr, pat_attr, pat_val):
    """``(n_rows, n_patterns)`` uint8 indicator matrix."""
    rows = np.ascontiguousarray(rows, dtype=np.int32)
    return _impl.match_patterns(rows, _i64(pat_ptr), _i64(pat_attr), _i64(pat_val))


def pack_patterns(patterns):
    """CSR arrays ``(ptr, attr, val)`` for a sequence of patterns."""
    ptr = np.zeros(len(patterns) + 1, dtype=_I64)
    attrs, vals = [], []
    for i, p in enumerate(patterns):
        attrs.extend(p.attrs)
        vals.extend(p.values)
        ptr[i + 1] = len(attrs)
    return ptr, np.array(attrs, dtype=_I64), np.array(vals, dtype=_I64)
