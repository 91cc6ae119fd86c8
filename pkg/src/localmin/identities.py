"""Self-checks of the algebraic identities the closed-form loss rests on.

Each check draws its own seeded instances and returns a small dict with the
worst observed error, the tolerance, and whether it passed. ``run_all`` is
what the ``lemma-check`` subcommand prints.
"""
from __future__ import annotations

import numpy as np

from .linalg import DEFAULT_CUTOFF, column_space_basis, project
from .minima import assemble_D, compute_J, vec
from .network import NetworkArch, activation_patterns, forward, init_params
from .randmat import shallow_min_loss
from .trainer import descend_to_stationarity

ACTIVATIONS = ("relu", "leaky:0.1", "abs")


def _random_net(rng, kind=None):
    H = int(rng.integers(1, 4))
    hidden = tuple(int(w) for w in rng.integers(1, 5, size=H))
    dx, dy = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    m = int(rng.integers(3, 12))
    act = kind or ACTIVATIONS[int(rng.integers(len(ACTIVATIONS)))]
    arch = NetworkArch(dx, dy, hidden, act)
    params = init_params(arch, seed=int(rng.integers(2**31)))
    X = rng.standard_normal((m, dx))
    Y = rng.standard_normal((m, dy))
    return params, X, Y


def jacobian_identity(cases: int = 50, seed: int = 0, tol: float = 1e-10) -> dict:
    """``vec(Yhat) = D^(l) vec(W^(l))`` for every layer (positive homogeneity)."""
    rng = np.random.default_rng([seed, 1])
    worst = 0.0
    for _ in range(cases):
        params, X, _ = _random_net(rng)
        trace = forward(params, X)
        d = assemble_D(trace, activation_patterns(trace), params)
        y = vec(trace.output)
        scale = 1.0 + np.linalg.norm(y)
        for l in range(1, params.arch.depth + 2):
            err = np.linalg.norm(d.layer(l) @ vec(params.weights[l - 1]) - y) / scale
            worst = max(worst, float(err))
    return {"name": "jacobian_identity", "cases": cases, "max_error": worst, "tol": tol, "ok": worst <= tol}


def orthogonal_additivity(cases: int = 50, seed: int = 0, tol: float = 1e-10) -> dict:
    """``P[[A, B]] = P[A] + P[B]`` when ``A^T B = 0``."""
    rng = np.random.default_rng([seed, 2])
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 15))
        ka = int(rng.integers(1, n))
        kb = int(rng.integers(1, n - ka + 1))
        Q, _ = np.linalg.qr(rng.standard_normal((n, ka + kb)))
        A = Q[:, :ka] @ rng.standard_normal((ka, ka))
        B = Q[:, ka:] @ rng.standard_normal((kb, kb))
        v = rng.standard_normal(n)
        lhs = project(column_space_basis(np.hstack([A, B])), v)
        rhs = project(column_space_basis(A), v) + project(column_space_basis(B), v)
        worst = max(worst, float(np.linalg.norm(lhs - rhs) / (1 + np.linalg.norm(v))))
    return {"name": "orthogonal_additivity", "cases": cases, "max_error": worst, "tol": tol, "ok": worst <= tol}


def direct_vs_decomposed(cases: int = 50, seed: int = 0, criterion=DEFAULT_CUTOFF, rel_tol: float = 1e-6) -> dict:
    """One-shot projection and summed block contributions give the same ``J``."""
    rng = np.random.default_rng([seed, 3])
    worst = 0.0
    for _ in range(cases):
        params, X, Y = _random_net(rng)
        trace = forward(params, X)
        rep = compute_J(trace, activation_patterns(trace), params, Y, criterion)
        err = abs(rep.J_direct - rep.J_decomposed) / (1 + 0.5 * float(np.sum(Y * Y)))
        worst = max(worst, err)
    return {"name": "direct_vs_decomposed", "cases": cases, "max_error": worst, "tol": rel_tol,
            "ok": worst <= rel_tol}


def shallow_minimum(seed: int = 0, attempts: int = 20, grad_tol: float = 1e-10, tol: float = 1e-6,
                    m: int = 12, d_x: int = 2, d: int = 3) -> dict:
    """Train a one-hidden-layer ReLU net to a stationary point and compare its loss
    with the pattern-only formula built from the realized activation pattern.

    Endpoints with a zero output weight are skipped: there the pattern matrix
    overstates what the net can reach and the formula is not claimed.
    """
    for attempt in range(attempts):
        rng = np.random.default_rng([seed, 5, attempt])
        X = rng.standard_normal((m, d_x))
        Y = rng.standard_normal((m, 1))
        params = init_params(NetworkArch(d_x, 1, (d,), "relu"), seed=[seed, 6, attempt])
        out, rep = descend_to_stationarity(params, X, Y, tol=grad_tol, max_iters=400)
        if rep.grad_norm > grad_tol or not rep.differentiable:
            continue
        if np.min(np.abs(out.weights[1])) < 1e-8:
            continue
        trace = forward(out, X)
        lam = activation_patterns(trace).values[0]
        formula = shallow_min_loss(lam, X, Y)
        err = abs(rep.loss - formula)
        return {"name": "shallow_minimum", "attempt": attempt, "L": rep.loss, "formula": formula,
                "grad_norm": rep.grad_norm, "max_error": err, "tol": tol, "ok": err <= tol}
    return {"name": "shallow_minimum", "attempt": attempts, "max_error": None, "tol": tol, "ok": False,
            "note": "no stationary differentiable endpoint found"}


def run_all(seed: int = 0, criterion=DEFAULT_CUTOFF) -> list[dict]:
    return [
        jacobian_identity(seed=seed),
        orthogonal_additivity(seed=seed),
        direct_vs_decomposed(seed=seed, criterion=criterion),
        shallow_minimum(seed=seed),
    ]
