"""Optimization drivers: mini-batch SGD with momentum and full-batch descent to stationarity."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .linalg import as_matrix
from .network import EPS_ACT, NetworkParams, activation_patterns, forward, gradient, loss


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 200
    epochs: int = 40
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @classmethod
    def synthetic(cls, **overrides) -> "TrainConfig":
        return cls(**{"momentum": 0.9, "batch_size": 200, **overrides})

    @classmethod
    def image_style(cls, **overrides) -> "TrainConfig":
        return cls(**{"momentum": 0.5, "batch_size": 64, **overrides})

    @classmethod
    def from_json(cls, path_or_obj) -> "TrainConfig":
        obj = path_or_obj
        if not isinstance(obj, dict):
            obj = json.loads(Path(obj).read_text())
        known = {k: obj[k] for k in ("learning_rate", "momentum", "batch_size", "epochs", "seed") if k in obj}
        return cls(**known)

    def to_json(self) -> dict:
        return asdict(self)


def _apply_mask(grads, mask):
    if mask is None:
        return grads
    return [g if mk is None else g * mk for g, mk in zip(grads, mask)]


def train_sgd(params: NetworkParams, X, Y, cfg: TrainConfig, mask=None, eps_act: float = EPS_ACT):
    """Shuffled mini-batch SGD with a heavy-ball buffer ``v <- mu v - lr g; W <- W + v``.

    ``g`` is the gradient of the batch's squared loss divided by the batch
    size. Epoch ``e`` shuffles with ``default_rng([seed, e])``. ``mask``
    optionally holds one 0/1 array per layer; masked weights never move.
    Returns ``(params, history)`` where ``history[e]`` is the full-batch loss
    after ``e`` epochs (entry 0 is the starting loss).
    """
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    m = X.shape[0]
    ws = [w.copy() for w in params.weights]
    vel = [np.zeros_like(w) for w in ws]
    history = [loss(forward(params, X), Y)]
    bs = min(cfg.batch_size, m)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(m)
        for start in range(0, m, bs):
            idx = order[start:start + bs]
            g = gradient(params.replace(ws), X[idx], Y[idx], eps_act, warn=False)
            grads = _apply_mask(g.grads, mask)
            scale = cfg.learning_rate / idx.size
            for W, v, gr in zip(ws, vel, grads):
                v *= cfg.momentum
                v -= scale * gr
                W += v
        current = loss(forward(params.replace(ws), X), Y)
        if not np.isfinite(current):
            raise TrainingDiverged(f"loss became {current} in epoch {epoch + 1} "
                                   f"(lr={cfg.learning_rate}, momentum={cfg.momentum})")
        history.append(current)
    return params.replace(ws), history


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for e, v in enumerate(history):
            w.writerow([e, format(v, ".17g")])


@dataclass
class StationarityReport:
    grad_norm: float
    min_abs_preactivation: float
    iterations_used: int
    differentiable: bool
    loss: float = float("nan")


def _report(params, X, Y, iters, eps_act, mask):
    g = gradient(params, X, Y, eps_act, warn=False)
    gn = float(np.sqrt(sum(np.sum(x * x) for x in _apply_mask(g.grads, mask))))
    pats = g.patterns
    return StationarityReport(gn, pats.min_abs_preactivation, iters, pats.differentiable, g.loss)


def _flat_grad(params, X, Y, eps_act, mask_flat):
    g = gradient(params, X, Y, eps_act, warn=False)
    flat = np.concatenate([x.ravel(order="F") for x in g.grads])
    if mask_flat is not None:
        flat = flat * mask_flat
    return g.loss, flat


def _lbfgs_direction(grad, pairs):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _newton_step(theta, grad, fgrad, free, fd_step):
    n = free.size
    Hm = np.empty((n, n))
    for c, idx in enumerate(free):
        h = fd_step * max(1.0, abs(theta[idx]))
        e = np.zeros_like(theta)
        e[idx] = h
        Hm[:, c] = (fgrad(theta + e)[free] - fgrad(theta - e)[free]) / (2 * h)
    Hm = 0.5 * (Hm + Hm.T)
    step, *_ = np.linalg.lstsq(Hm, -grad[free], rcond=1e-10)
    out = np.zeros_like(theta)
    out[free] = step
    return out


def descend_to_stationarity(params: NetworkParams, X, Y, tol: float = 1e-8, max_iters: int = 5000,
                            mask=None, eps_act: float = EPS_ACT, method: str = "lbfgs",
                            initial_step: float = 1.0, shrink: float = 0.5, armijo: float = 1e-4,
                            history: int = 20, polish_iters: int = 30):
    """Full-batch descent with Armijo backtracking until ``grad_norm <= tol``.

    ``method="gd"`` steps along ``-g``; ``method="lbfgs"`` (default) uses a
    limited-memory quasi-Newton direction. Every line search starts at
    ``initial_step`` and multiplies by ``shrink`` until
    ``L(theta + s p) <= L(theta) + armijo * s * g.p``, so accepted iterates never
    increase the loss.

    Once the line search can no longer resolve a decrease (loss differences at
    rounding level), up to ``polish_iters`` Newton steps with a
    finite-difference Hessian and a pseudo-inverse solve drive the gradient
    down; they are accepted only if the gradient norm shrinks and the loss
    rises by no more than rounding noise. Running out of iterations is not an
    error: the last iterate is returned with its report.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    mask_flat = None
    if mask is not None:
        mask_flat = np.concatenate([
            (np.ones(w.shape) if mk is None else np.asarray(mk, dtype=float)).ravel(order="F")
            for w, mk in zip(params.weights, mask)])
    theta = params.flat()

    def fgrad(th):
        return _flat_grad(params.unflat(th), X, Y, eps_act, mask_flat)[1]

    L, g = _flat_grad(params, X, Y, eps_act, mask_flat)
    pairs = []
    it = 0
    stalled = False
    while it < max_iters and np.linalg.norm(g) > tol:
        p = -g if method == "gd" else _lbfgs_direction(g, pairs)
        slope = float(g @ p)
        if slope >= 0:
            pairs.clear()
            p, slope = -g, -float(g @ g)
        step = initial_step
        while True:
            cand = theta + step * p
            Lc, gc = _flat_grad(params.unflat(cand), X, Y, eps_act, mask_flat)
            if Lc <= L + armijo * step * slope:
                break
            step *= shrink
            if step < 1e-20:
                stalled = True
                break
        if stalled:
            break
        s, yv = cand - theta, gc - g
        sy = float(s @ yv)
        if method != "gd" and sy > 1e-300:
            pairs.append((s, yv, 1.0 / sy))
            if len(pairs) > history:
                pairs.pop(0)
        theta, L, g = cand, Lc, gc
        it += 1
    if np.linalg.norm(g) > tol and polish_iters > 0:
        free = np.arange(theta.size) if mask_flat is None else np.flatnonzero(mask_flat)
        noise = 64 * np.finfo(float).eps * max(1.0, abs(L))
        for _ in range(polish_iters):
            if np.linalg.norm(g) <= tol:
                break
            cand = theta + _newton_step(theta, g, fgrad, free, 1e-5)
            Lc, gc = _flat_grad(params.unflat(cand), X, Y, eps_act, mask_flat)
            if not (np.linalg.norm(gc) < np.linalg.norm(g) and Lc <= L + noise):
                break
            theta, L, g = cand, Lc, gc
            it += 1
    out = params.unflat(theta)
    return out, _report(out, X, Y, it, eps_act, mask)
