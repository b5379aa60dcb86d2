"""Pure-Python (numpy) versions of the compiled kernels in ``_kernels.pyx``.

The outputs are bit-identical to the compiled versions: both accumulate
probabilities strictly left to right.
"""

import numpy as np


def _offdiag_cdf(M):
    C = np.array(M, dtype=float).T.copy()  # row x = column x of M
    np.fill_diagonal(C, 0.0)
    C[C < 0.0] = 0.0
    return np.cumsum(C, axis=1), C > 0.0


def thin_walk(states, path_ptr, cand_coord, cand_thresh, cand_dest_u, cand_c, M):
    states = np.asarray(states)
    M = np.asarray(M, dtype=float)
    n_paths = states.shape[0]
    n_cand = len(cand_coord)
    accepted = np.zeros(n_cand, dtype=np.int8)
    newsym = np.full(n_cand, -1, dtype=np.int64)
    if n_cand == 0:
        return accepted, newsym
    cdf, positive = _offdiag_cdf(M)
    K = M.shape[0]
    exit_rate = -np.diag(M)
    counts = np.diff(path_ptr)
    width = int(counts.max()) if n_paths else 0
    rows = np.arange(n_paths)
    # process the r-th candidate of every path at once; paths are independent
    for r in range(width):
        live = rows[counts > r]
        j = path_ptr[live] + r
        k = cand_coord[j]
        x = states[live, k]
        ex = exit_rate[x]
        ok = (ex > 0.0) & (cand_thresh[j] < cand_c[j] * ex)
        if not ok.any():
            continue
        live, j, k, x, ex = live[ok], j[ok], k[ok], x[ok], ex[ok]
        target = cand_dest_u[j] * ex
        y = (cdf[x] <= target[:, None]).sum(axis=1)
        # round-off overflow: fall back to the last reachable symbol
        over = y >= K
        if over.any():
            last = K - 1 - np.argmax(positive[x[over]][:, ::-1], axis=1)
            y[over] = last
        has_dest = positive[x].any(axis=1)
        live, j, k, y = live[has_dest], j[has_dest], k[has_dest], y[has_dest]
        accepted[j] = 1
        newsym[j] = y
        states[live, k] = y
    return accepted, newsym


def sample_rows(P, u):
    P = np.asarray(P, dtype=float)
    u = np.asarray(u, dtype=float)
    if P.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    cum = np.cumsum(P, axis=1)
    target = u * cum[:, -1]
    idx = (cum <= target[:, None]).sum(axis=1)
    over = idx >= P.shape[1]
    if over.any():
        pos = P[over] > 0.0
        last = P.shape[1] - 1 - np.argmax(pos[:, ::-1], axis=1)
        idx[over] = np.where(pos.any(axis=1), last, 0)
    return idx.astype(np.int64)
