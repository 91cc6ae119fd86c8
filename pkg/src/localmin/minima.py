"""Closed-form loss value at differentiable local minima.

At a differentiable stationary point the prediction equals the projection of
``vec(Y)`` onto the column space of ``[D, D_last]``, the output Jacobian of
the network with respect to every weight. This module assembles those Jacobian
blocks, splits the projected energy into per-unit contributions by a
sequential block orthogonalization, and evaluates ``J`` both from the one-shot
projection and from the sum of contributions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .linalg import (
    DEFAULT_CUTOFF,
    CutoffCriterion,
    ProjectorBasis,
    as_matrix,
    column_space_basis,
    cutoff_value,
    project_null,
)
from .network import ActivationTensor, ForwardTrace, NetworkParams, activation_patterns, forward

DEFAULT_MEMORY_CAP = 1 << 30


class MemoryCapError(MemoryError):
    pass


def vec(M: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(M).ravel(order="F")


def estimate_bytes(m: int, widths) -> int:
    """Bytes needed for the dense ``[D, D_last]`` of a net with layer sizes ``widths``."""
    dy = widths[-1]
    cols = sum(widths[l - 1] * widths[l] for l in range(1, len(widths)))
    return 8 * m * dy * cols


@dataclass
class DBlocks:
    """Jacobian blocks of ``vec(Yhat)``.

    ``layers[l-1]`` is ``D^(l) = [D_1^(l) ... D_{d_l}^(l)]`` with shape
    ``(m*d_y, d_l*d_{l-1})``; ``last`` is ``I_{d_y} (x) Phi^(H)``.
    """

    widths: tuple
    layers: list
    last: np.ndarray

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def ambient_dim(self) -> int:
        return self.last.shape[0]

    def block(self, l: int, k: int) -> np.ndarray:
        """``D_k^(l)`` (1-based ``l``, ``k``); ``block(H+1, 1)`` is the last block."""
        if l == self.depth + 1:
            if k != 1:
                raise IndexError("the output layer has a single block")
            return self.last
        p = self.widths[l - 1]
        return self.layers[l - 1][:, (k - 1) * p:k * p]

    def layer(self, l: int) -> np.ndarray:
        return self.last if l == self.depth + 1 else self.layers[l - 1]

    def full(self, include_last: bool = True) -> np.ndarray:
        parts = list(self.layers) + ([self.last] if include_last else [])
        if not parts:
            return np.zeros((self.ambient_dim, 0))
        return np.hstack(parts)

    def order(self, include_last: bool = True):
        """Block keys in Gram-Schmidt order: layer 1 unit 1, ..., layer H unit d_H, then (H+1, 1)."""
        keys = [(l, k) for l in range(1, self.depth + 1) for k in range(1, self.widths[l] + 1)]
        if include_last:
            keys.append((self.depth + 1, 1))
        return keys


def assemble_D(trace: ForwardTrace, patterns: ActivationTensor, params: NetworkParams,
               memory_cap: int = DEFAULT_MEMORY_CAP) -> DBlocks:
    widths = params.arch.widths
    m = trace.m
    need = estimate_bytes(m, widths)
    if need > memory_cap:
        raise MemoryCapError(
            f"dense Jacobian needs ~{need / 2**20:.1f} MiB (m={m}, widths={widths}), "
            f"cap is {memory_cap / 2**20:.1f} MiB; shrink m or the widths, or raise the cap")
    dy = widths[-1]
    lams = [np.ascontiguousarray(v) for v in patterns.values]
    chains = kernels.back_chain(lams, params.weights, dy)
    layers = [kernels.layer_jacobian(np.ascontiguousarray(chains[l - 1]),
                                     np.ascontiguousarray(trace.phis[l - 1]))
              for l in range(1, len(lams) + 1)]
    last = np.kron(np.eye(dy), trace.phis[len(lams)])
    return DBlocks(widths, layers, last)


@dataclass
class QDecomposition:
    running_basis: ProjectorBasis
    contributions: dict
    order: list
    cutoff: float = 0.0

    @property
    def total(self) -> float:
        return float(sum(self.contributions.values()))

    def as_rows(self):
        return [[l, k, v] for (l, k), v in ((key, self.contributions[key]) for key in self.order)]


def _prepared_blocks(d: DBlocks, keys, column_masks):
    for key in keys:
        B = d.block(*key)
        if column_masks is not None and key in column_masks:
            B = B[:, column_masks[key]]
        yield key, B


def decompose_contributions(d: DBlocks, Y, pre_projector: ProjectorBasis | np.ndarray | None = None,
                            criterion: CutoffCriterion | str = DEFAULT_CUTOFF,
                            include_last: bool = True, column_masks: dict | None = None,
                            order=None, cutoff: float | None = None) -> QDecomposition:
    """Per-block projected energy under sequential block orthogonalization.

    Block ``k`` (optionally null-projected by ``pre_projector`` first, and
    restricted to ``column_masks[(l, k)]`` columns) contributes the energy of
    ``vec(Y)`` along the part of its span that is new relative to blocks
    ``1..k-1``. That equals ``0.5*||P[V_k] y||^2 - 0.5*||P[V_{k-1}] y||^2`` for
    the nested spans ``V_k``, which is how it is evaluated: one SVD per prefix
    instead of re-orthogonalizing against a running basis, whose error grows
    like ``eps * ||B|| / sigma`` for weakly independent blocks.

    The null projection is never formed explicitly. ``span(Q, P_N[Q] B)`` equals
    ``span(Q, B)``, so the prefixes start from ``Q`` and its captured energy
    is subtracted; projecting first leaves ``eps``-level residue in
    directions of ``Q`` that can clear the rank cutoff. ``pre_projector`` may
    be a basis or the raw spanning columns; raw columns are preferable when
    they are ill conditioned, since an orthonormalized basis carries an error
    of order ``eps * cond`` in its span.
    Rank decisions use one absolute cutoff, by default the criterion applied
    to the whole stacked matrix, so the final prefix reproduces the one-shot
    projection. The returned basis spans ``Q`` together with the blocks.
    """
    criterion = CutoffCriterion.parse(criterion)
    y = vec(as_matrix(Y, "Y"))
    if y.size != d.ambient_dim:
        raise ValueError(f"vec(Y) has length {y.size}, blocks live in dimension {d.ambient_dim}")
    keys = list(order) if order is not None else d.order(include_last)
    blocks = list(_prepared_blocks(d, keys, column_masks))
    prefix = []
    if isinstance(pre_projector, ProjectorBasis):
        if pre_projector.rank:
            prefix.append(pre_projector.basis)
    elif pre_projector is not None:
        pre = np.asarray(pre_projector, dtype=np.float64)
        if pre.ndim != 2 or pre.shape[0] != d.ambient_dim:
            raise ValueError(f"pre-projection columns must have {d.ambient_dim} rows, got shape {pre.shape}")
        if pre.shape[1]:
            prefix.append(pre)
    if cutoff is None:
        mats = prefix + [B for _, B in blocks if B.shape[1]]
        cutoff = cutoff_value(np.hstack(mats), criterion) if mats else 0.0
    basis = ProjectorBasis.empty(d.ambient_dim, criterion)
    captured = 0.0
    if prefix:
        basis = column_space_basis(prefix[0], criterion, cutoff=cutoff)
        c = basis.basis.T @ y
        captured = 0.5 * float(c @ c)
    contributions = {}
    for key, B in blocks:
        if B.shape[1] == 0:
            contributions[key] = 0.0
            continue
        prefix.append(B)
        basis = column_space_basis(np.hstack(prefix), criterion, cutoff=cutoff)
        c = basis.basis.T @ y
        energy = 0.5 * float(c @ c)
        contributions[key] = energy - captured
        captured = energy
    return QDecomposition(basis, contributions, keys, float(cutoff))


@dataclass
class MinimaReport:
    L: float
    J_direct: float
    J_decomposed: float
    contributions: QDecomposition
    grad_norm: float
    differentiable: bool
    rank: int = 0
    cutoff: float = 0.0
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "L": self.L,
            "J_direct": self.J_direct,
            "J_decomposed": self.J_decomposed,
            "grad_norm": self.grad_norm,
            "differentiable": self.differentiable,
            "contributions": self.contributions.as_rows(),
        }


def j_direct(d: DBlocks, Y, criterion: CutoffCriterion | str = DEFAULT_CUTOFF) -> tuple[float, ProjectorBasis]:
    """``0.5 * ||(I - P[[D, D_last]]) vec(Y)||^2`` from a single SVD."""
    y = vec(as_matrix(Y, "Y"))
    basis = column_space_basis(d.full(), criterion)
    r = project_null(basis, y)
    return 0.5 * float(r @ r), basis


def compute_J(trace: ForwardTrace, patterns: ActivationTensor, params: NetworkParams, Y,
              criterion: CutoffCriterion | str = DEFAULT_CUTOFF,
              memory_cap: int = DEFAULT_MEMORY_CAP) -> MinimaReport:
    criterion = CutoffCriterion.parse(criterion)
    Y = as_matrix(Y, "Y")
    d = assemble_D(trace, patterns, params, memory_cap)
    y = vec(Y)
    jd, basis = j_direct(d, Y, criterion)
    q = decompose_contributions(d, Y, None, criterion, cutoff=basis.cutoff_used)
    half_y2 = 0.5 * float(y @ y)
    r = vec(trace.output - Y)
    grad = d.full().T @ r
    return MinimaReport(
        L=0.5 * float(r @ r),
        J_direct=jd,
        J_decomposed=half_y2 - q.total,
        contributions=q,
        grad_norm=float(np.linalg.norm(grad)),
        differentiable=patterns.differentiable,
        rank=basis.rank,
        cutoff=basis.cutoff_used,
    )


def analyze_point(params: NetworkParams, X, Y, criterion=DEFAULT_CUTOFF, eps_act: float = 1e-12,
                  memory_cap: int = DEFAULT_MEMORY_CAP) -> MinimaReport:
    """Forward pass, pattern extraction and :func:`compute_J` in one call."""
    trace = forward(params, X)
    return compute_J(trace, activation_patterns(trace, eps_act), params, Y, criterion, memory_cap)
