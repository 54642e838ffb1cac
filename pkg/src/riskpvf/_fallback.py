"""Pure numpy sampling kernels, vectorised over runs and particles.

Signatures and uniform-stream layout match the compiled ``_kernels``
module exactly, so both backends draw the same paths from the same
uniforms.
"""

import numpy as np


def _draw_rows(cdf, u):
    """Inverse-CDF draw per row of ``cdf`` (shape ``[N, n]``) with uniforms ``u`` (``[N]``)."""
    n = cdf.shape[1]
    idx = np.sum(cdf <= u[:, None], axis=1)
    over = idx >= n
    if np.any(over):
        # rounding gap above cdf[-1]: fall back to the last positive-mass entry
        rows = cdf[over]
        inc = np.diff(rows, axis=1, prepend=0.0) > 0
        idx[over] = n - 1 - np.argmax(inc[:, ::-1], axis=1)
    return idx


def rollout_batch(pcdf, tcdf, reward, init_states, u):
    """Independent rollouts.

    Args:
        pcdf: policy CDF ``[T+1, S, A]`` indexed by steps remaining.
        tcdf: transition CDF ``[S, A, S]``.
        reward: ``[T+1, S, A]`` indexed by steps remaining.
        init_states: ``[n]`` start states.
        u: uniforms ``[n, T+1, 2]``; ``[..., 0]`` draws the action and
            ``[..., 1]`` the next state.

    Returns:
        ``(states, actions, rewards)`` each of shape ``[n, T+1]``.
    """
    n, steps = u.shape[0], u.shape[1]
    T = steps - 1
    states = np.empty((n, steps), dtype=np.int64)
    actions = np.empty((n, steps), dtype=np.int64)
    rewards = np.empty((n, steps))
    s = np.asarray(init_states, dtype=np.int64).copy()
    for t in range(steps):
        t_rem = T - t
        a = _draw_rows(pcdf[t_rem, s], u[:, t, 0])
        states[:, t] = s
        actions[:, t] = a
        rewards[:, t] = reward[t_rem, s, a]
        if t < T:
            s = _draw_rows(tcdf[s, a], u[:, t, 1])
    return states, actions, rewards


def filter_batch(pcdf, tcdf, reward, init_states, beta, u):
    """Bootstrap particle filter, many independent runs at once.

    Args:
        init_states: ``[K]`` start state per particle.
        beta: nonzero risk parameter.
        u: uniforms ``[n, T+1, K, 3]``: parent, transition, action.

    Returns:
        ``(states, actions, ancestors, log_weights, log_z)``; the first
        four have shape ``[n, T+1, K]`` and ``log_z`` has ``[n, T+1]``.
        ``ancestors[:, 0]`` is ``-1``.
    """
    n, steps, K = u.shape[0], u.shape[1], u.shape[2]
    T = steps - 1
    states = np.empty((n, steps, K), dtype=np.int64)
    actions = np.empty((n, steps, K), dtype=np.int64)
    ancestors = np.full((n, steps, K), -1, dtype=np.int64)
    log_w = np.empty((n, steps, K))
    log_z = np.empty((n, steps))
    log_k = np.log(K)

    s = np.broadcast_to(np.asarray(init_states, dtype=np.int64), (n, K)).reshape(-1).copy()
    for t in range(steps):
        t_rem = T - t
        if t > 0:
            prev_lw = log_w[:, t - 1]
            w = np.exp(prev_lw - prev_lw.max(axis=1, keepdims=True))
            cw = np.cumsum(w, axis=1)  # [n, K]
            target = (u[:, t, :, 0] * cw[:, -1:]).reshape(-1)
            cw_rep = np.repeat(cw, K, axis=0)
            parent = _draw_rows(cw_rep, target).reshape(n, K)
            ancestors[:, t] = parent
            ps = np.take_along_axis(states[:, t - 1], parent, axis=1).reshape(-1)
            pa = np.take_along_axis(actions[:, t - 1], parent, axis=1).reshape(-1)
            s = _draw_rows(tcdf[ps, pa], u[:, t, :, 1].reshape(-1))
        a = _draw_rows(pcdf[t_rem, s], u[:, t, :, 2].reshape(-1))
        states[:, t] = s.reshape(n, K)
        actions[:, t] = a.reshape(n, K)
        lw = beta * reward[t_rem, s, a].reshape(n, K)
        log_w[:, t] = lw
        m = lw.max(axis=1)
        log_z[:, t] = m + np.log(np.sum(np.exp(lw - m[:, None]), axis=1)) - log_k
    return states, actions, ancestors, log_w, log_z
