"""Numba kernels for the per-observation gradient step and the training loop.

All kernels release the GIL so several Python threads can run them on the same
tables at once without locks (racy element-wise updates are accepted).
"""

import numpy as np
from numba import njit

OK = 0
NONFINITE = 1
SAMPLER_EXHAUSTED = 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(nogil=True, cache=True)
def _next_u64(state):
    # splitmix64
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(nogil=True, cache=True)
def _uniform(state):
    return np.float64(_next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(nogil=True, cache=True)
def _draw(prob, alias, state, exclude):
    n = prob.shape[0]
    for _ in range(100):
        col = int(_uniform(state) * n)
        if col >= n:
            col = n - 1
        x = col if _uniform(state) < prob[col] else alias[col]
        if x != exclude:
            return x
    return -1


@njit(nogil=True, cache=True)
def _softplus(x):
    if x > 0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(nogil=True, cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(nogil=True, cache=True)
def _dot(a, b):
    s = 0.0
    for p in range(a.shape[0]):
        s += a[p] * b[p]
    return s


@njit(nogil=True, cache=True)
def step(item_in, item_out, user, word, ufeat, item_user, tied,
         d_item_in, d_item_out, d_user, d_word, d_ufeat, d_item_user, scale,
         u, items, tok_ptr, toks, utoks, item_negs, word_negs, uf_negs,
         use_user_bias, use_item_ctx, use_user_ctx, losses):
    """One observation: losses at the current point, then ``d_* += scale * grad``.

    ``items`` is (target, ctx...); ``tok_ptr``/``toks`` give each of those items'
    tokens; ``word_negs[r]`` are the negatives of the r-th (item, token) pair in
    that order; ``uf_negs[r]`` those of ``utoks[r]``. The gradient is gathered
    from the source tables before anything is written, so passing the source
    tables as destinations with ``scale=-alpha`` is a plain SGD step.
    """
    P = item_in.shape[1]
    PU = user.shape[1]
    k = items.shape[0] - 1
    n_neg = item_negs.shape[0]
    n_pairs = toks.shape[0] if use_item_ctx else 0
    n_x = utoks.shape[0] if use_user_ctx else 0
    n_wneg = word_negs.shape[1]
    n_xneg = uf_negs.shape[1]
    ub = 1.0 if use_user_bias else 0.0

    # ---- gather: coefficients d(loss)/d(score) at the current point
    c = np.zeros(P)
    for q in range(1, k + 1):
        row = item_in[items[q]]
        for p in range(P):
            c[p] += row[p]
    for p in range(P):
        c[p] /= k
    zu = np.empty(PU)
    for p in range(PU):
        zu[p] = user[u, p]

    g_items = np.empty(n_neg + 1)
    seq_loss = 0.0
    for r in range(n_neg + 1):
        i = items[0] if r == 0 else item_negs[r - 1]
        qv = _dot(item_out[i], c)
        if use_user_bias:
            qv += _dot(item_user[i], zu) if not tied else _dot(item_out[i], zu)
        if not np.isfinite(qv):
            return NONFINITE
        if r == 0:
            seq_loss += _softplus(-qv)
            g_items[r] = -_sigmoid(-qv)
        else:
            seq_loss += _softplus(qv)
            g_items[r] = _sigmoid(qv)

    g_words = np.zeros((max(n_pairs, 1), n_wneg + 1))
    pair_item = np.zeros(max(n_pairs, 1), dtype=np.int64)
    wctx_loss = 0.0
    if n_pairs > 0:
        for j in range(k + 1):
            for r in range(tok_ptr[j], tok_ptr[j + 1]):
                pair_item[r] = j
                zi = item_in[items[j]]
                qv = _dot(word[toks[r]], zi)
                if not np.isfinite(qv):
                    return NONFINITE
                wctx_loss += _softplus(-qv)
                g_words[r, 0] = -_sigmoid(-qv)
                for s in range(n_wneg):
                    qv = _dot(word[word_negs[r, s]], zi)
                    if not np.isfinite(qv):
                        return NONFINITE
                    wctx_loss += _softplus(qv)
                    g_words[r, s + 1] = _sigmoid(qv)

    g_uf = np.zeros((max(n_x, 1), n_xneg + 1))
    uctx_loss = 0.0
    for r in range(n_x):
        qv = _dot(ufeat[utoks[r]], zu)
        if not np.isfinite(qv):
            return NONFINITE
        uctx_loss += _softplus(-qv)
        g_uf[r, 0] = -_sigmoid(-qv)
        for s in range(n_xneg):
            qv = _dot(ufeat[uf_negs[r, s]], zu)
            if not np.isfinite(qv):
                return NONFINITE
            uctx_loss += _softplus(qv)
            g_uf[r, s + 1] = _sigmoid(qv)

    losses[0] += seq_loss
    losses[1] += wctx_loss
    losses[2] += uctx_loss

    # ---- deltas, all read from the unmodified source tables
    grad_c = np.zeros(P)
    grad_u = np.zeros(PU)
    out_delta = np.zeros((n_neg + 1, P))
    us_delta = np.zeros((n_neg + 1, PU))
    for r in range(n_neg + 1):
        i = items[0] if r == 0 else item_negs[r - 1]
        g = g_items[r]
        o = item_out[i]
        for p in range(P):
            grad_c[p] += g * o[p]
            out_delta[r, p] = g * c[p]
        if use_user_bias:
            if tied:
                for p in range(P):
                    out_delta[r, p] += g * zu[p]
                    grad_u[p] += g * o[p]
            else:
                us = item_user[i]
                for p in range(PU):
                    us_delta[r, p] = g * zu[p]
                    grad_u[p] += g * us[p]

    in_delta = np.zeros((k + 1, P))
    for q in range(1, k + 1):
        for p in range(P):
            in_delta[q, p] = grad_c[p] / k
    word_delta = np.zeros((max(n_pairs, 1), n_wneg + 1, P))
    for r in range(n_pairs):
        j = pair_item[r]
        zi = item_in[items[j]]
        for s in range(n_wneg + 1):
            w = toks[r] if s == 0 else word_negs[r, s - 1]
            g = g_words[r, s]
            zw = word[w]
            for p in range(P):
                in_delta[j, p] += g * zw[p]
                word_delta[r, s, p] = g * zi[p]
    uf_delta = np.zeros((max(n_x, 1), n_xneg + 1, PU))
    for r in range(n_x):
        for s in range(n_xneg + 1):
            x = utoks[r] if s == 0 else uf_negs[r, s - 1]
            g = g_uf[r, s]
            zx = ufeat[x]
            for p in range(PU):
                grad_u[p] += g * zx[p]
                uf_delta[r, s, p] = g * zu[p]

    # ---- scatter
    for r in range(n_neg + 1):
        i = items[0] if r == 0 else item_negs[r - 1]
        for p in range(P):
            d_item_out[i, p] += scale * out_delta[r, p]
        if use_user_bias and not tied:
            for p in range(PU):
                d_item_user[i, p] += scale * us_delta[r, p]
    for j in range(k + 1):
        i = items[j]
        for p in range(P):
            d_item_in[i, p] += scale * in_delta[j, p]
    for p in range(PU):
        d_user[u, p] += scale * grad_u[p]
    for r in range(n_pairs):
        for s in range(n_wneg + 1):
            w = toks[r] if s == 0 else word_negs[r, s - 1]
            for p in range(P):
                d_word[w, p] += scale * word_delta[r, s, p]
    for r in range(n_x):
        for s in range(n_xneg + 1):
            x = utoks[r] if s == 0 else uf_negs[r, s - 1]
            for p in range(PU):
                d_ufeat[x, p] += scale * uf_delta[r, s, p]
    return OK


@njit(nogil=True, cache=True)
def train_shard(item_in, item_out, user, word, ufeat, item_user, tied,
                obs_user, obs_target, ctx_ptr, ctx,
                item_tok_ptr, item_tok, user_tok_ptr, user_tok,
                i_prob, i_alias, w_prob, w_alias, x_prob, x_alias,
                perm, start, stop, step_offset, total_steps, alpha0, n_neg,
                use_user_bias, use_item_ctx, use_user_ctx,
                rng_state, losses, status):
    """Run observations ``perm[start:stop]`` through :func:`step` in place.

    ``status`` receives (code, position) on failure; ``losses`` accumulates
    (sequence, item-context, user-context) sums.
    """
    max_items = 1
    for q in range(start, stop):
        o = perm[q]
        m = ctx_ptr[o + 1] - ctx_ptr[o] + 1
        if m > max_items:
            max_items = m
    max_tok = 0
    for i in range(item_tok_ptr.shape[0] - 1):
        m = item_tok_ptr[i + 1] - item_tok_ptr[i]
        if m > max_tok:
            max_tok = m
    max_utok = 0
    for v in range(user_tok_ptr.shape[0] - 1):
        m = user_tok_ptr[v + 1] - user_tok_ptr[v]
        if m > max_utok:
            max_utok = m

    items_buf = np.empty(max_items, dtype=np.int64)
    tok_ptr_buf = np.empty(max_items + 1, dtype=np.int64)
    toks_buf = np.empty(max_items * max_tok, dtype=np.int64)
    item_negs = np.empty(n_neg, dtype=np.int64)
    wneg_buf = np.empty((max(max_items * max_tok, 1), n_neg), dtype=np.int64)
    xneg_buf = np.empty((max(max_utok, 1), n_neg), dtype=np.int64)
    do_words = use_item_ctx and w_prob.shape[0] > 0
    do_ufeat = use_user_ctx and x_prob.shape[0] > 0

    for q in range(start, stop):
        o = perm[q]
        l = step_offset + q
        frac = 1.0 - l / total_steps
        alpha = alpha0 * (frac if frac > 1e-4 else 1e-4)

        u = obs_user[o]
        a, b = ctx_ptr[o], ctx_ptr[o + 1]
        n_items = b - a + 1
        items_buf[0] = obs_target[o]
        for r in range(a, b):
            items_buf[r - a + 1] = ctx[r]
        items = items_buf[:n_items]

        nt = 0
        tok_ptr_buf[0] = 0
        for j in range(n_items):
            if do_words:
                i = items[j]
                for r in range(item_tok_ptr[i], item_tok_ptr[i + 1]):
                    toks_buf[nt] = item_tok[r]
                    nt += 1
            tok_ptr_buf[j + 1] = nt
        toks = toks_buf[:nt]
        tok_ptr = tok_ptr_buf[:n_items + 1]

        nx = 0
        if do_ufeat:
            nx = user_tok_ptr[u + 1] - user_tok_ptr[u]
        utoks = user_tok[user_tok_ptr[u]:user_tok_ptr[u] + nx]

        for s in range(n_neg):
            x = _draw(i_prob, i_alias, rng_state, items[0])
            if x < 0:
                status[0] = SAMPLER_EXHAUSTED
                status[1] = q
                return
            item_negs[s] = x
        for r in range(nt):
            for s in range(n_neg):
                x = _draw(w_prob, w_alias, rng_state, toks[r])
                if x < 0:
                    status[0] = SAMPLER_EXHAUSTED
                    status[1] = q
                    return
                wneg_buf[r, s] = x
        for r in range(nx):
            for s in range(n_neg):
                x = _draw(x_prob, x_alias, rng_state, utoks[r])
                if x < 0:
                    status[0] = SAMPLER_EXHAUSTED
                    status[1] = q
                    return
                xneg_buf[r, s] = x

        code = step(item_in, item_out, user, word, ufeat, item_user, tied,
                    item_in, item_out, user, word, ufeat, item_user, -alpha,
                    u, items, tok_ptr, toks, utoks, item_negs,
                    wneg_buf[:max(nt, 1)], xneg_buf[:max(nx, 1)],
                    use_user_bias, do_words, do_ufeat, losses)
        if code != OK:
            status[0] = code
            status[1] = q
            return
    status[0] = OK
