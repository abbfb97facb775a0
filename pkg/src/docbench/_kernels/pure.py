"""Pure-Python/numpy kernel lane.

Reference implementations of the hot kernels. ``match_total`` delegates to
``difflib.SequenceMatcher`` (autojunk off), whose greedy longest-block
decomposition the accel lane replicates exactly, so both lanes agree on
every input. The window search below mirrors the accel loop structure,
including the length-bound early exit and the character-count prune, so the
two lanes compute the same maxima.
"""

from __future__ import annotations

from difflib import SequenceMatcher

import numpy as np


def match_total(a: str, b: str) -> int:
    """Total length of the greedy best-matching-block decomposition."""
    if not a or not b:
        return 0
    matcher = SequenceMatcher(None, a, b, autojunk=False)
    return sum(block.size for block in matcher.get_matching_blocks())


def match_total_lcs(a: str, b: str) -> int:
    """Length of the longest common subsequence (the stricter match variant)."""
    la, lb = len(a), len(b)
    if la == 0 or lb == 0:
        return 0
    prev = [0] * (lb + 1)
    for i in range(la):
        cur = [0] * (lb + 1)
        ai = a[i]
        for j in range(lb):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = cur[j] if cur[j] >= prev[j + 1] else prev[j + 1]
        prev = cur
    return prev[lb]


def best_window_score(citation: str, source: str, use_lcs: bool = False) -> float:
    """Maximum of 2*Match(citation, w)/(|citation|+|w|) over source windows w.

    Candidate windows are all contiguous substrings of ``source`` no shorter
    than the citation (no shorter than the whole source when the citation is
    longer than the source). Exact: windows are only skipped when a cheap
    upper bound proves they cannot beat the best score found so far, and the
    scan over window lengths stops once even a perfect match at that length
    could not win.
    """
    lc, n = len(citation), len(source)
    if lc == 0 or n == 0:
        return 0.0
    match_fn = match_total_lcs if use_lcs else match_total

    c_counts: dict[str, int] = {}
    for ch in citation:
        c_counts[ch] = c_counts.get(ch, 0) + 1

    best = 0.0
    min_len = min(lc, n)
    for length in range(min_len, n + 1):
        cap = min(lc, length)
        if 2.0 * cap / (lc + length) <= best:
            break
        w_counts: dict[str, int] = {}
        inter = 0
        for ch in source[:length]:
            w_counts[ch] = w_counts.get(ch, 0) + 1
            if w_counts[ch] <= c_counts.get(ch, 0):
                inter += 1
        for start in range(0, n - length + 1):
            if start > 0:
                gone = source[start - 1]
                if w_counts[gone] <= c_counts.get(gone, 0):
                    inter -= 1
                w_counts[gone] -= 1
                new = source[start + length - 1]
                w_counts[new] = w_counts.get(new, 0) + 1
                if w_counts[new] <= c_counts.get(new, 0):
                    inter += 1
            if 2.0 * inter / (lc + length) <= best:
                continue
            score = 2.0 * match_fn(citation, source[start : start + length]) / (lc + length)
            if score > best:
                best = score
    return best


def dbscan_labels(adjacency: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Density-cluster labels from a boolean neighbor matrix.

    ``adjacency[i, j]`` is True when j lies in i's neighborhood (self
    included); ``core[i]`` marks points with enough neighbors. Returns one
    label per point, ``-1`` for noise. Expansion order is fixed (ascending
    index), so labels are deterministic for a given matrix.
    """
    n = adjacency.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        stack = [i]
        while stack:
            p = stack.pop()
            if not core[p]:
                continue
            for q in np.flatnonzero(adjacency[p] & (labels == -1)):
                labels[q] = cluster
                stack.append(int(q))
        cluster += 1
    return labels
