# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sampling kernels. Same contract as ``riskpvf._fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


cdef inline Py_ssize_t _draw(const double[:] cdf, double u) noexcept nogil:
    cdef Py_ssize_t n = cdf.shape[0]
    cdef Py_ssize_t k
    for k in range(n):
        if u < cdf[k]:
            return k
    # rounding gap above cdf[-1]: last positive-mass entry
    k = n - 1
    while k > 0 and cdf[k] == cdf[k - 1]:
        k -= 1
    return k


def rollout_batch(const double[:, :, :] pcdf, const double[:, :, :] tcdf,
                  const double[:, :, :] reward, init_states, const double[:, :, :] u):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t steps = u.shape[1]
    cdef Py_ssize_t T = steps - 1
    cdef Py_ssize_t r, t, t_rem, s, a

    init = np.ascontiguousarray(init_states, dtype=np.int64)
    cdef const cnp.int64_t[:] s0 = init
    states_arr = np.empty((n, steps), dtype=np.int64)
    actions_arr = np.empty((n, steps), dtype=np.int64)
    rewards_arr = np.empty((n, steps), dtype=np.float64)
    cdef cnp.int64_t[:, :] states = states_arr
    cdef cnp.int64_t[:, :] actions = actions_arr
    cdef double[:, :] rewards = rewards_arr

    with nogil:
        for r in range(n):
            s = s0[r]
            for t in range(steps):
                t_rem = T - t
                a = _draw(pcdf[t_rem, s], u[r, t, 0])
                states[r, t] = s
                actions[r, t] = a
                rewards[r, t] = reward[t_rem, s, a]
                if t < T:
                    s = _draw(tcdf[s, a], u[r, t, 1])
    return states_arr, actions_arr, rewards_arr


def filter_batch(const double[:, :, :] pcdf, const double[:, :, :] tcdf,
                 const double[:, :, :] reward, init_states, double beta,
                 const double[:, :, :, :] u):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t steps = u.shape[1]
    cdef Py_ssize_t K = u.shape[2]
    cdef Py_ssize_t T = steps - 1
    cdef Py_ssize_t r, t, t_rem, i, j, s, a, parent
    cdef double m, acc, target
    cdef double log_k = log(<double>K)

    init = np.ascontiguousarray(init_states, dtype=np.int64)
    cdef const cnp.int64_t[:] s0 = init
    states_arr = np.empty((n, steps, K), dtype=np.int64)
    actions_arr = np.empty((n, steps, K), dtype=np.int64)
    anc_arr = np.full((n, steps, K), -1, dtype=np.int64)
    lw_arr = np.empty((n, steps, K), dtype=np.float64)
    lz_arr = np.empty((n, steps), dtype=np.float64)
    cw_arr = np.empty(K, dtype=np.float64)
    cdef cnp.int64_t[:, :, :] states = states_arr
    cdef cnp.int64_t[:, :, :] actions = actions_arr
    cdef cnp.int64_t[:, :, :] ancestors = anc_arr
    cdef double[:, :, :] log_w = lw_arr
    cdef double[:, :] log_z = lz_arr
    cdef double[:] cw = cw_arr

    with nogil:
        for r in range(n):
            for t in range(steps):
                t_rem = T - t
                if t > 0:
                    m = log_w[r, t - 1, 0]
                    for j in range(1, K):
                        if log_w[r, t - 1, j] > m:
                            m = log_w[r, t - 1, j]
                    acc = 0.0
                    for j in range(K):
                        acc = acc + exp(log_w[r, t - 1, j] - m)
                        cw[j] = acc
                for i in range(K):
                    if t == 0:
                        s = s0[i]
                    else:
                        target = u[r, t, i, 0] * cw[K - 1]
                        parent = _draw(cw, target)
                        ancestors[r, t, i] = parent
                        s = _draw(tcdf[states[r, t - 1, parent], actions[r, t - 1, parent]],
                                  u[r, t, i, 1])
                    a = _draw(pcdf[t_rem, s], u[r, t, i, 2])
                    states[r, t, i] = s
                    actions[r, t, i] = a
                    log_w[r, t, i] = beta * reward[t_rem, s, a]
                m = log_w[r, t, 0]
                for i in range(1, K):
                    if log_w[r, t, i] > m:
                        m = log_w[r, t, i]
                acc = 0.0
                for i in range(K):
                    acc = acc + exp(log_w[r, t, i] - m)
                log_z[r, t] = m + log(acc) - log_k
    return states_arr, actions_arr, anc_arr, lw_arr, lz_arr
