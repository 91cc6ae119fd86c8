"""Locally linear unit structures and the regression-baseline upper bounds they give.

A parameter point may make some hidden units act linearly on the training
inputs with (almost) no edges from those units into the remaining ones. When
it does, the loss at a differentiable local minimum is at most the optimum of
basis-function regression on any chosen set of layer outputs, minus the extra
energy captured by the Jacobian blocks once that basis is projected out.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    DEFAULT_CUTOFF,
    CutoffCriterion,
    as_matrix,
    column_space_basis,
    project_null,
)
from .minima import DBlocks, QDecomposition, assemble_D, decompose_contributions
from .network import (
    ActivationKind,
    ActivationTensor,
    ForwardTrace,
    NetworkArch,
    NetworkParams,
    forward,
    init_params,
)

DEFAULT_STRUCTURE_TOL = 1e-9


@dataclass(frozen=True)
class StructureCert:
    """Index sets ``sets[l]`` (1-based unit indices) for layers ``t+1 .. H+1``."""

    t: int
    sets: dict
    kind: str = "weak"
    tol: float = DEFAULT_STRUCTURE_TOL
    n: int = 1

    def complement(self, l: int, width: int) -> list[int]:
        chosen = set(self.sets[l])
        return [k for k in range(1, width + 1) if k not in chosen]

    def to_json(self) -> dict:
        return {"t": self.t, "kind": self.kind, "tol": self.tol, "n": self.n,
                "sets": {str(l): list(s) for l, s in sorted(self.sets.items())}}


@dataclass
class BoundReport:
    S: tuple
    regression_term: float
    improvement_term: float
    bound: float
    L_value: float
    kind: str = "theorem2"
    decomposition: QDecomposition | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"kind": self.kind, "S": list(self.S), "regression_term": self.regression_term,
                "improvement_term": self.improvement_term, "bound": self.bound, "L": self.L_value}


def _linear_units(trace: ForwardTrace, params: NetworkParams, l: int, tol: float) -> list[int]:
    G = trace.phis[l - 1] @ params.weights[l - 1]
    res = np.linalg.norm(trace.phis[l] - G, axis=0)
    ref = np.linalg.norm(G, axis=0)
    return [int(k) + 1 for k in np.flatnonzero(res <= tol * ref)]


def detect_structure(trace: ForwardTrace, params: NetworkParams, n: int, t: int,
                     kind: str = "weak", tol: float = DEFAULT_STRUCTURE_TOL) -> StructureCert | None:
    """Greedy search for ``(n, t)`` separated linear units.

    Starts from every unit that acts linearly on the data at each layer
    ``t+1..H`` (all outputs at ``H+1``) and removes units that violate the
    edge conditions until nothing changes. Edges count as zero when
    ``|w| <= tol * max|W|`` for that layer. Returns ``None`` if some layer
    keeps fewer than ``n`` units.
    """
    kind = kind.lower()
    if kind not in {"weak", "strong"}:
        raise ValueError(f"kind must be 'weak' or 'strong', got {kind!r}")
    H = params.arch.depth
    if not 0 <= t <= H:
        raise ValueError(f"t must lie in [0, {H}], got {t}")
    widths = params.arch.widths
    S = {l: set(_linear_units(trace, params, l, tol)) for l in range(t + 1, H + 1)}
    S[H + 1] = set(range(1, widths[H + 1] + 1))

    changed = True
    while changed:
        changed = False
        for l in range(H - 1, t, -1):
            W = params.weights[l]
            wtol = tol * float(np.abs(W).max()) if W.size else 0.0
            outside = [k - 1 for k in range(1, widths[l + 1] + 1) if k not in S[l + 1]]
            if outside:
                for kp in sorted(S[l]):
                    if np.any(np.abs(W[kp - 1, outside]) > wtol):
                        S[l].discard(kp)
                        changed = True
            if kind == "strong":
                others = [k - 1 for k in range(1, widths[l] + 1) if k not in S[l]]
                if others:
                    Phi = trace.phis[l]
                    for k in sorted(S[l + 1]):
                        leak = np.linalg.norm(Phi[:, others] @ W[others, k - 1])
                        full = np.linalg.norm(Phi @ W[:, k - 1])
                        if leak > tol * full:
                            S[l + 1].discard(k)
                            changed = True
    if any(len(S[l]) < n for l in S):
        return None
    return StructureCert(t, {l: tuple(sorted(S[l])) for l in sorted(S)}, kind, tol, n)


def regression_optimum(Phi_S, Y, criterion: CutoffCriterion | str = DEFAULT_CUTOFF) -> float:
    """``0.5 * ||P_N[Phi_S] Y||_F^2 = inf_R 0.5 * ||Phi_S R - Y||_F^2``."""
    Y = as_matrix(Y, "Y")
    Phi_S = np.asarray(Phi_S, dtype=np.float64)
    if Phi_S.size == 0:
        return 0.5 * float(np.sum(Y * Y))
    Phi_S = as_matrix(Phi_S, "Phi_S")
    if Phi_S.shape[0] != Y.shape[0]:
        raise ValueError(f"Phi_S has {Phi_S.shape[0]} rows, Y has {Y.shape[0]}")
    R = project_null(column_space_basis(Phi_S, criterion), Y)
    return 0.5 * float(np.sum(R * R))


def _check_subset(S, allowed, what):
    S = tuple(int(s) for s in S)
    if len(set(S)) != len(S):
        raise ValueError(f"S has repeated layers: {S}")
    bad = [s for s in S if s not in allowed]
    if bad:
        raise ValueError(f"S contains layers {bad} outside {what}")
    return S


def _bound(trace, params, Y, S, criterion, d, column_masks, kind):
    criterion = CutoffCriterion.parse(criterion)
    Y = as_matrix(Y, "Y")
    m, dy = Y.shape
    Phi_S = np.hstack([trace.phis[l] for l in S]) if S else np.zeros((m, 0))
    R = project_null(column_space_basis(Phi_S, criterion), Y)
    regression = 0.5 * float(np.sum(R * R))
    pre = np.kron(np.eye(dy), Phi_S) if S else None
    q = decompose_contributions(d, Y, pre, criterion, include_last=False, column_masks=column_masks)
    res = trace.output - Y
    return BoundReport(S, regression, q.total, regression - q.total,
                       0.5 * float(np.sum(res * res)), kind, q)


def _blocks(trace, patterns, params, d):
    return d if d is not None else assemble_D(trace, patterns, params)


def theorem2_bound(trace: ForwardTrace, patterns: ActivationTensor, params: NetworkParams, Y,
                   cert: StructureCert, S, criterion=DEFAULT_CUTOFF, d: DBlocks | None = None) -> BoundReport:
    """Regression optimum on ``[Phi^(l)]_{l in S}`` minus the improvement of the
    null-projected Jacobian blocks of layers ``1..H``.

    ``S`` must be drawn from ``t..H`` where ``t`` is the certificate's level.
    Strong certificates are accepted too, since they also satisfy the weak
    conditions.
    """
    H = params.arch.depth
    S = _check_subset(S, range(cert.t, H + 1), f"{{{cert.t}..{H}}}")
    return _bound(trace, params, Y, S, criterion, _blocks(trace, patterns, params, d), None, "theorem2")


def corollary1_masks(cert: StructureCert, widths) -> dict:
    """Column selections for the restricted blocks: for ``l >= t+2`` and units
    outside ``S^(l)`` keep only inputs from units outside ``S^(l-1)``."""
    H = len(widths) - 2
    masks = {}
    for l in range(cert.t + 2, H + 1):
        prev = set(cert.sets[l - 1])
        keep = np.array([j not in prev for j in range(1, widths[l - 1] + 1)])
        for k in cert.complement(l, widths[l]):
            masks[(l, k)] = keep
    return masks


def corollary1_bound(trace, patterns, params, Y, cert: StructureCert, S, criterion=DEFAULT_CUTOFF,
                     d: DBlocks | None = None) -> BoundReport:
    """Bound for minima of the loss restricted to nets whose forbidden edges are fixed at zero."""
    H = params.arch.depth
    S = _check_subset(S, range(cert.t, H + 1), f"{{{cert.t}..{H}}}")
    masks = corollary1_masks(cert, params.arch.widths)
    return _bound(trace, params, Y, S, criterion, _blocks(trace, patterns, params, d), masks, "corollary1")


def corollary2_bound(trace, patterns, params, Y, cert: StructureCert, S, criterion=DEFAULT_CUTOFF,
                     d: DBlocks | None = None) -> BoundReport:
    """Strong-structure bound; ``S`` may only use the end layers ``t`` and ``H``."""
    if cert.kind != "strong":
        raise ValueError("corollary2_bound needs a strong certificate")
    H = params.arch.depth
    S = _check_subset(S, {cert.t, H}, f"({cert.t}, {H})")
    return _bound(trace, params, Y, S, criterion, _blocks(trace, patterns, params, d), None, "corollary2")


def lemma4_residuals(trace: ForwardTrace, Y, t: int) -> dict:
    """``||Phi^(l)^T (Yhat - Y)||_F`` for ``l = t..H``; zero at structured local minima."""
    Y = as_matrix(Y, "Y")
    r = trace.output - Y
    H = trace.arch.depth
    return {l: float(np.linalg.norm(trace.phis[l].T @ r)) for l in range(t, H + 1)}


def stationarity_slack(grad_norm: float, Y, C: float = 10.0, floor: float = 1e-6) -> float:
    """Tolerance ``C * grad_norm * ||Y|| + floor`` for equalities that are exact only at stationary points."""
    return C * grad_norm * float(np.linalg.norm(Y)) + floor


# -- planted structures -----------------------------------------------------

def plant_structure(X, output_dim: int, hidden_widths, t: int, n_linear: int, strong: bool = False,
                    seed: int = 0, base: ActivationKind | str = "relu", max_draws: int = 200):
    """Network whose units ``1..n_linear`` of layers ``t+1..H`` are linear pass-throughs.

    Forbidden edges (linear unit -> nonlinear unit of the next layer) are
    zeroed; ``strong=True`` also zeroes nonlinear -> linear edges above layer
    ``t+1``. Weights are redrawn until every other unit in layers ``t+1..H``
    is genuinely nonlinear on ``X`` (mixed preactivation signs), so the
    planted sets are exactly the detectable ones. Returns ``(params, sets)``.
    """
    X = as_matrix(X, "X")
    widths_h = tuple(int(w) for w in hidden_widths)
    H = len(widths_h)
    if not 0 <= t <= H:
        raise ValueError("t out of range")
    if any(n_linear > w for w in widths_h[t:]):
        raise ValueError("n_linear exceeds a layer width")
    base = ActivationKind.parse(base)
    acts = []
    for l, w in enumerate(widths_h, start=1):
        if l <= t:
            acts.append(base)
        else:
            acts.append(tuple(ActivationKind.linear() if k < n_linear else base for k in range(w)))
    arch = NetworkArch(X.shape[1], output_dim, widths_h, tuple(acts))
    sets = {l: tuple(range(1, n_linear + 1)) for l in range(t + 1, H + 1)}
    sets[H + 1] = tuple(range(1, output_dim + 1))
    for draw in range(max_draws):
        ws = [w.copy() for w in init_params(arch, seed=(seed, draw)).weights]
        for l in range(t + 1, H):
            W = ws[l]
            W[:n_linear, n_linear:] = 0.0
            if strong:
                W[n_linear:, :n_linear] = 0.0
        params = NetworkParams(arch, tuple(ws))
        trace = forward(params, X)
        ok = True
        for l in range(t + 1, H + 1):
            G = trace.pre[l - 1][:, n_linear:]
            if G.size and not np.all((G > 0).any(axis=0) & (G < 0).any(axis=0)):
                ok = False
                break
        if ok:
            return params, sets
    raise RuntimeError("could not draw a planted network with strictly nonlinear free units")
