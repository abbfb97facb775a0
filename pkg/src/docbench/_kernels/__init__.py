"""Kernel lane selection.

The hot inner loops (fuzzy-match window search, density-cluster expansion)
have two interchangeable implementations:

* ``accel`` — numba ``@njit`` kernels (default when numba imports cleanly);
* ``pure``  — numpy/stdlib fallback, exact same results, no compilation.

Set ``DOCBENCH_NO_NUMBA=1`` to force the pure lane. The two lanes are
result-identical by construction (integer match totals, identical float
formulas); ``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import os

from . import pure

_FORCE_PURE = os.environ.get("DOCBENCH_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

if not _FORCE_PURE:
    try:
        from . import accel

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - depends on environment
        accel = None  # type: ignore[assignment]
        HAS_NUMBA = False
else:
    accel = None  # type: ignore[assignment]
    HAS_NUMBA = False

_lane = accel if HAS_NUMBA else pure
ACTIVE_LANE = "accel" if HAS_NUMBA else "pure"

match_total = _lane.match_total
match_total_lcs = _lane.match_total_lcs
best_window_score = _lane.best_window_score
dbscan_labels = _lane.dbscan_labels

__all__ = [
    "ACTIVE_LANE",
    "HAS_NUMBA",
    "best_window_score",
    "dbscan_labels",
    "match_total",
    "match_total_lcs",
    "pure",
    "accel",
]
