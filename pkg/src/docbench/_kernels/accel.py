"""Numba-accelerated kernel lane.

Same contracts as ``pure``; see that module for the algorithm notes. The
match total replicates difflib's greedy decomposition (longest block first,
earliest-in-a then earliest-in-b tie-break, recurse left and right), so the
two lanes return identical integers and therefore identical window scores.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _longest_match(a, b, alo, ahi, blo, bhi, j2len, newj2len):
    besti = alo
    bestj = blo
    bestsize = 0
    for j in range(blo, bhi):
        j2len[j] = 0
    for i in range(alo, ahi):
        ai = a[i]
        for j in range(blo, bhi):
            newj2len[j] = 0
        for j in range(blo, bhi):
            if b[j] == ai:
                k = j2len[j - 1] + 1 if j > blo else 1
                newj2len[j] = k
                if k > bestsize:
                    besti = i - k + 1
                    bestj = j - k + 1
                    bestsize = k
        for j in range(blo, bhi):
            j2len[j] = newj2len[j]
    return besti, bestj, bestsize


@njit(cache=True)
def _match_total_arr(a, b):
    la = a.shape[0]
    lb = b.shape[0]
    if la == 0 or lb == 0:
        return 0
    j2len = np.zeros(lb, dtype=np.int64)
    newj2len = np.zeros(lb, dtype=np.int64)
    # each found block pushes at most two subranges
    stack = np.empty((2 * min(la, lb) + 2, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = la
    stack[0, 2] = 0
    stack[0, 3] = lb
    top = 1
    total = 0
    while top > 0:
        top -= 1
        alo = stack[top, 0]
        ahi = stack[top, 1]
        blo = stack[top, 2]
        bhi = stack[top, 3]
        if alo >= ahi or blo >= bhi:
            continue
        besti, bestj, bestsize = _longest_match(a, b, alo, ahi, blo, bhi, j2len, newj2len)
        if bestsize > 0:
            total += bestsize
            stack[top, 0] = alo
            stack[top, 1] = besti
            stack[top, 2] = blo
            stack[top, 3] = bestj
            top += 1
            stack[top, 0] = besti + bestsize
            stack[top, 1] = ahi
            stack[top, 2] = bestj + bestsize
            stack[top, 3] = bhi
            top += 1
    return total


@njit(cache=True)
def _lcs_arr(a, b):
    la = a.shape[0]
    lb = b.shape[0]
    if la == 0 or lb == 0:
        return 0
    prev = np.zeros(lb + 1, dtype=np.int64)
    cur = np.zeros(lb + 1, dtype=np.int64)
    for i in range(la):
        ai = a[i]
        cur[0] = 0
        for j in range(lb):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            elif cur[j] >= prev[j + 1]:
                cur[j + 1] = cur[j]
            else:
                cur[j + 1] = prev[j + 1]
        for j in range(lb + 1):
            prev[j] = cur[j]
    return prev[lb]


@njit(cache=True)
def _best_window_arr(c, s, use_lcs):
    lc = c.shape[0]
    n = s.shape[0]
    if lc == 0 or n == 0:
        return 0.0
    max_code = 0
    for i in range(lc):
        if c[i] > max_code:
            max_code = c[i]
    for i in range(n):
        if s[i] > max_code:
            max_code = s[i]
    c_counts = np.zeros(max_code + 1, dtype=np.int64)
    w_counts = np.zeros(max_code + 1, dtype=np.int64)
    for i in range(lc):
        c_counts[c[i]] += 1

    best = 0.0
    min_len = lc if lc < n else n
    for length in range(min_len, n + 1):
        cap = lc if lc < length else length
        if 2.0 * cap / (lc + length) <= best:
            break
        for i in range(max_code + 1):
            w_counts[i] = 0
        inter = 0
        for i in range(length):
            ch = s[i]
            w_counts[ch] += 1
            if w_counts[ch] <= c_counts[ch]:
                inter += 1
        for start in range(0, n - length + 1):
            if start > 0:
                gone = s[start - 1]
                if w_counts[gone] <= c_counts[gone]:
                    inter -= 1
                w_counts[gone] -= 1
                new = s[start + length - 1]
                w_counts[new] += 1
                if w_counts[new] <= c_counts[new]:
                    inter += 1
            if 2.0 * inter / (lc + length) <= best:
                continue
            window = s[start : start + length]
            m = _lcs_arr(c, window) if use_lcs else _match_total_arr(c, window)
            score = 2.0 * m / (lc + length)
            if score > best:
                best = score
    return best


@njit(cache=True)
def _dbscan_arr(adjacency, core):
    n = adjacency.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        stack[0] = i
        top = 1
        while top > 0:
            top -= 1
            p = stack[top]
            if not core[p]:
                continue
            for q in range(n):
                if adjacency[p, q] and labels[q] == -1:
                    labels[q] = cluster
                    stack[top] = q
                    top += 1
        cluster += 1
    return labels


def _codes(text: str) -> np.ndarray:
    # dense remap keeps the count tables in the window kernel small
    return np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)


def match_total(a: str, b: str) -> int:
    if not a or not b:
        return 0
    return int(_match_total_arr(_codes(a), _codes(b)))


def match_total_lcs(a: str, b: str) -> int:
    if not a or not b:
        return 0
    return int(_lcs_arr(_codes(a), _codes(b)))


def best_window_score(citation: str, source: str, use_lcs: bool = False) -> float:
    if not citation or not source:
        return 0.0
    c = _codes(citation)
    s = _codes(source)
    # remap codepoints to a dense alphabet so count tables stay small
    alphabet, inverse = np.unique(np.concatenate((c, s)), return_inverse=True)
    del alphabet
    c_ids = np.ascontiguousarray(inverse[: c.shape[0]])
    s_ids = np.ascontiguousarray(inverse[c.shape[0] :])
    return float(_best_window_arr(c_ids, s_ids, use_lcs))


def dbscan_labels(adjacency: np.ndarray, core: np.ndarray) -> np.ndarray:
    adj = np.ascontiguousarray(adjacency, dtype=np.bool_)
    core_mask = np.ascontiguousarray(core, dtype=np.bool_)
    return _dbscan_arr(adj, core_mask)
