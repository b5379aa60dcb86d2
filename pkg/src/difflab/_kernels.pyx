# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops: thinning walk for separable CTMC rates and row-wise
inverse-CDF sampling. ``_fallback.py`` holds the reference Python versions;
both must produce identical outputs for identical inputs."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def thin_walk(cnp.int64_t[:, ::1] states,
              const cnp.int64_t[::1] path_ptr,
              const cnp.int64_t[::1] cand_coord,
              const double[::1] cand_thresh,
              const double[::1] cand_dest_u,
              const double[::1] cand_c,
              const double[:, ::1] M):
    """Walk every path through its candidate events, mutating ``states``.

    Candidate j of path p lives in path_ptr[p] <= j < path_ptr[p+1]. It is
    accepted when cand_thresh[j] < c_j * exit(x), with exit(x) = -M[x, x].
    The destination is drawn from the off-diagonal column M[:, x].
    Returns (accepted flags, new symbols) per candidate.
    """
    cdef Py_ssize_t n_paths = states.shape[0]
    cdef Py_ssize_t n_cand = cand_coord.shape[0]
    cdef Py_ssize_t K = M.shape[0]
    cdef Py_ssize_t p, j, k, y, last
    cdef cnp.int64_t x
    cdef double ex, target, acc
    accepted_np = np.zeros(n_cand, dtype=np.int8)
    newsym_np = np.full(n_cand, -1, dtype=np.int64)
    cdef cnp.int8_t[::1] accepted = accepted_np
    cdef cnp.int64_t[::1] newsym = newsym_np
    with nogil:
        for p in range(n_paths):
            for j in range(path_ptr[p], path_ptr[p + 1]):
                k = cand_coord[j]
                x = states[p, k]
                ex = -M[x, x]
                if ex <= 0.0:
                    continue
                if cand_thresh[j] >= cand_c[j] * ex:
                    continue
                target = cand_dest_u[j] * ex
                acc = 0.0
                last = -1
                for y in range(K):
                    if y == x or M[y, x] <= 0.0:
                        continue
                    last = y
                    acc = acc + M[y, x]
                    if target < acc:
                        break
                if last < 0:
                    continue
                accepted[j] = 1
                newsym[j] = last
                states[p, k] = last
    return accepted_np, newsym_np


def sample_rows(const double[:, ::1] P, const double[::1] u):
    """Inverse-CDF draw per row of an (unnormalised) nonnegative matrix."""
    cdef Py_ssize_t n = P.shape[0]
    cdef Py_ssize_t K = P.shape[1]
    cdef Py_ssize_t i, k, last
    cdef double tot, acc, target
    out_np = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_np
    with nogil:
        for i in range(n):
            tot = 0.0
            for k in range(K):
                tot = tot + P[i, k]
            target = u[i] * tot
            acc = 0.0
            last = 0
            for k in range(K):
                if P[i, k] <= 0.0:
                    continue
                last = k
                acc = acc + P[i, k]
                if target < acc:
                    break
            out[i] = last
    return out_np
