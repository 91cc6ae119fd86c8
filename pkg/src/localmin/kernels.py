"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names dispatch on :data:`localmin._accel.USE_NUMBA`. The
``*_numpy`` and ``*_numba`` variants stay importable for tests and the
benchmark, which check the two agree.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# --- activation derivatives ----------------------------------------------


def pattern_derivatives_numpy(G, pos, neg, eps):
    """Derivative of a per-unit piecewise-linear activation at each preactivation.

    ``pos``/``neg`` are the per-unit slopes for ``z > 0`` and ``z < 0``.
    Entries with ``|z| <= eps`` get 0 unless the unit is linear there
    (``pos == neg``). Returns ``(lam, hits)`` where ``hits`` counts those
    entries on units with a kink.
    """
    near = np.abs(G) <= eps
    kinked = pos != neg
    lam = np.where(G > 0, pos, neg).astype(np.float64)
    bad = near & kinked[None, :]
    lam[bad] = 0.0
    return lam, int(bad.sum())


@njit
def pattern_derivatives_numba(G, pos, neg, eps):
    m, d = G.shape
    lam = np.empty((m, d))
    hits = 0
    for i in range(m):
        for k in range(d):
            z = G[i, k]
            if abs(z) <= eps and pos[k] != neg[k]:
                lam[i, k] = 0.0
                hits += 1
            elif z > 0:
                lam[i, k] = pos[k]
            else:
                lam[i, k] = neg[k]
    return lam, hits


def apply_activation_numpy(G, pos, neg):
    return np.where(G > 0, G * pos, G * neg)


@njit
def apply_activation_numba(G, pos, neg):
    m, d = G.shape
    out = np.empty((m, d))
    for i in range(m):
        for k in range(d):
            z = G[i, k]
            out[i, k] = z * pos[k] if z > 0 else z * neg[k]
    return out


# --- Jacobian blocks ------------------------------------------------------


def layer_jacobian_numpy(B, Phi):
    """Dense ``d(vec Yhat)/d(vec W)`` for one layer.

    ``B[j, i, k]`` is the derivative of output ``j`` on sample ``i`` with
    respect to the preactivation of unit ``k``; ``Phi`` (m x p) is the
    layer input. Row ``j*m + i``, column ``k*p + q`` holds
    ``B[j, i, k] * Phi[i, q]`` (column-stacked vec convention).
    """
    dy, m, d = B.shape
    p = Phi.shape[1]
    return (B[:, :, :, None] * Phi[None, :, None, :]).reshape(dy * m, d * p)


@njit
def layer_jacobian_numba(B, Phi):
    dy, m, d = B.shape
    p = Phi.shape[1]
    out = np.empty((dy * m, d * p))
    for j in range(dy):
        for i in range(m):
            r = j * m + i
            for k in range(d):
                b = B[j, i, k]
                base = k * p
                for q in range(p):
                    out[r, base + q] = b * Phi[i, q]
    return out


def back_chain_numpy(lams, weights, dy):
    """Back-chains ``B^(l)`` for l = H..1 (returned in layer order 1..H).

    ``B^(H)[j, i, k] = lam_H[i, k] W^(H+1)[k, j]`` and
    ``B^(l)[j] = lam_l * (B^(l+1)[j] @ W^(l+1).T)``.
    """
    H = len(lams)
    out = [None] * H
    if H == 0:
        return out
    Wlast = weights[H]
    cur = lams[H - 1][None, :, :] * Wlast.T[:, None, :]
    out[H - 1] = cur
    for l in range(H - 2, -1, -1):
        cur = lams[l][None, :, :] * (cur @ weights[l + 1].T)
        out[l] = cur
    return out


@njit
def _chain_step_numba(lam, Bnext, W):
    dy, m, dn = Bnext.shape
    d = W.shape[0]
    out = np.zeros((dy, m, d))
    for j in range(dy):
        prod = Bnext[j] @ W.T
        for i in range(m):
            for k in range(d):
                out[j, i, k] = lam[i, k] * prod[i, k]
    return out


@njit
def _chain_top_numba(lam, W):
    m, d = lam.shape
    dy = W.shape[1]
    out = np.empty((dy, m, d))
    for j in range(dy):
        for i in range(m):
            for k in range(d):
                out[j, i, k] = lam[i, k] * W[k, j]
    return out


def back_chain_numba(lams, weights, dy):
    H = len(lams)
    out = [None] * H
    if H == 0:
        return out
    cur = _chain_top_numba(np.ascontiguousarray(lams[H - 1]), np.ascontiguousarray(weights[H]))
    out[H - 1] = cur
    for l in range(H - 2, -1, -1):
        cur = _chain_step_numba(np.ascontiguousarray(lams[l]), cur, np.ascontiguousarray(weights[l + 1]))
        out[l] = cur
    return out


# --- shallow design matrix -------------------------------------------------


def dtilde_numpy(Lam, X):
    """``[diag(Lam[:,0]) X, ..., diag(Lam[:,d-1]) X]``."""
    m, d = Lam.shape
    return (Lam[:, :, None] * X[:, None, :]).reshape(m, d * X.shape[1])


@njit
def dtilde_numba(Lam, X):
    m, d = Lam.shape
    p = X.shape[1]
    out = np.empty((m, d * p))
    for i in range(m):
        for k in range(d):
            lk = Lam[i, k]
            for q in range(p):
                out[i, k * p + q] = lk * X[i, q]
    return out


# --- weighted chi-square tails -------------------------------------------


def chisq_tail_counts_numpy(g, a2, upper, lower):
    """Count rows of ``g`` (trials x n) whose ``sum a2 * (g^2 - 1)`` is >= upper / <= lower."""
    s = (g * g - 1.0) @ a2
    return int(np.count_nonzero(s >= upper)), int(np.count_nonzero(s <= lower))


@njit
def chisq_tail_counts_numba(g, a2, upper, lower):
    trials, n = g.shape
    hi = 0
    lo = 0
    for r in range(trials):
        s = 0.0
        for i in range(n):
            x = g[r, i]
            s += a2[i] * (x * x - 1.0)
        if s >= upper:
            hi += 1
        if s <= lower:
            lo += 1
    return hi, lo


if USE_NUMBA:
    pattern_derivatives = pattern_derivatives_numba
    apply_activation = apply_activation_numba
    layer_jacobian = layer_jacobian_numba
    back_chain = back_chain_numba
    dtilde = dtilde_numba
    chisq_tail_counts = chisq_tail_counts_numba
else:
    pattern_derivatives = pattern_derivatives_numpy
    apply_activation = apply_activation_numpy
    layer_jacobian = layer_jacobian_numpy
    back_chain = back_chain_numpy
    dtilde = dtilde_numpy
    chisq_tail_counts = chisq_tail_counts_numpy
