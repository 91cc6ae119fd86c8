"""Bias-free fully connected feedforward networks with piecewise-linear activations."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import kernels
from .linalg import as_matrix, read_binary, write_binary

EPS_ACT = 1e-12
DEFAULT_LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class ActivationKind:
    """One activation function.

    ``relu``, ``leaky_relu`` (slope ``a`` for negative inputs, ``a <= 1``),
    ``abs`` and ``linear`` are analyzable. ``tanh`` is only used to generate
    synthetic targets and has no activation pattern.
    """

    tag: str
    a: float = 0.0

    def __post_init__(self):
        if self.tag not in {"relu", "leaky_relu", "abs", "linear", "tanh"}:
            raise ValueError(f"unknown activation {self.tag!r}")
        if self.tag == "leaky_relu" and self.a > 1:
            raise ValueError(f"leaky ReLU slope must be <= 1, got {self.a}")

    @classmethod
    def relu(cls):
        return cls("relu")

    @classmethod
    def leaky(cls, a: float = DEFAULT_LEAKY_SLOPE):
        return cls("leaky_relu", float(a))

    @classmethod
    def absolute(cls):
        return cls("abs")

    @classmethod
    def linear(cls):
        return cls("linear")

    @classmethod
    def tanh(cls):
        return cls("tanh")

    @classmethod
    def parse(cls, spec) -> "ActivationKind":
        if isinstance(spec, ActivationKind):
            return spec
        if isinstance(spec, dict):
            return cls(spec["tag"], float(spec.get("a", 0.0)))
        text = str(spec).strip().lower()
        if text.startswith("leaky"):
            _, _, a = text.partition(":")
            return cls.leaky(float(a) if a else DEFAULT_LEAKY_SLOPE)
        return cls({"relu": "relu", "abs": "abs", "linear": "linear", "tanh": "tanh"}[text])

    @property
    def slopes(self) -> tuple[float, float]:
        """Slopes on the positive and negative half-lines."""
        return {
            "relu": (1.0, 0.0),
            "leaky_relu": (1.0, self.a),
            "abs": (1.0, -1.0),
            "linear": (1.0, 1.0),
        }[self.tag]

    def to_json(self):
        return {"tag": self.tag, "a": self.a} if self.tag == "leaky_relu" else {"tag": self.tag}


LayerActivation = Union[ActivationKind, Sequence[ActivationKind]]


@dataclass(frozen=True)
class NetworkArch:
    """Layer sizes and activations. A layer's activation is one kind or one kind per unit."""

    input_dim: int
    output_dim: int
    hidden_widths: tuple[int, ...]
    activations: tuple = ()

    def __post_init__(self):
        widths = tuple(int(w) for w in self.hidden_widths)
        object.__setattr__(self, "hidden_widths", widths)
        if self.input_dim < 1 or self.output_dim < 1 or any(w < 1 for w in widths):
            raise ValueError("all layer widths must be >= 1")
        acts = self.activations
        if isinstance(acts, (ActivationKind, str)):
            acts = (acts,) * len(widths)
        acts = tuple(acts) if acts else (ActivationKind.relu(),) * len(widths)
        if len(acts) != len(widths):
            raise ValueError(f"{len(acts)} activations for {len(widths)} hidden layers")
        norm = []
        for w, act in zip(widths, acts):
            if isinstance(act, (ActivationKind, str, dict)):
                norm.append(ActivationKind.parse(act))
            else:
                units = tuple(ActivationKind.parse(a) for a in act)
                if len(units) != w:
                    raise ValueError(f"per-unit activations: expected {w}, got {len(units)}")
                norm.append(units)
        object.__setattr__(self, "activations", tuple(norm))

    @property
    def depth(self) -> int:
        return len(self.hidden_widths)

    @property
    def widths(self) -> tuple[int, ...]:
        """``(d_0, d_1, ..., d_H, d_{H+1})``."""
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    def unit_kinds(self, layer: int) -> tuple[ActivationKind, ...]:
        """Per-unit activations of hidden layer ``layer`` (1-based)."""
        act = self.activations[layer - 1]
        if isinstance(act, ActivationKind):
            return (act,) * self.hidden_widths[layer - 1]
        return act

    def slopes(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        kinds = self.unit_kinds(layer)
        if any(k.tag == "tanh" for k in kinds):
            raise ValueError(f"layer {layer} uses tanh, which has no activation pattern")
        pos, neg = zip(*(k.slopes for k in kinds))
        return np.array(pos), np.array(neg)

    def to_json(self):
        acts = []
        for act in self.activations:
            acts.append(act.to_json() if isinstance(act, ActivationKind) else [a.to_json() for a in act])
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_widths": list(self.hidden_widths),
            "activations": acts,
        }

    @classmethod
    def from_json(cls, obj) -> "NetworkArch":
        acts = [a if isinstance(a, dict) else [ActivationKind.parse(u) for u in a] for a in obj["activations"]]
        return cls(obj["input_dim"], obj["output_dim"], tuple(obj["hidden_widths"]), tuple(acts))


@dataclass(frozen=True)
class NetworkParams:
    arch: NetworkArch
    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = tuple(as_matrix(w, f"W^({i + 1})") for i, w in enumerate(self.weights))
        widths = self.arch.widths
        if len(ws) != len(widths) - 1:
            raise ValueError(f"expected {len(widths) - 1} weight matrices, got {len(ws)}")
        for l, w in enumerate(ws, start=1):
            if w.shape != (widths[l - 1], widths[l]):
                raise ValueError(f"W^({l}) has shape {w.shape}, expected {(widths[l - 1], widths[l])}")
        object.__setattr__(self, "weights", ws)

    def replace(self, weights) -> "NetworkParams":
        return NetworkParams(self.arch, tuple(weights))

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights)

    def flat(self) -> np.ndarray:
        """``theta``: the column-stacked ``vec(W^(l))`` concatenated over layers."""
        return np.concatenate([w.ravel(order="F") for w in self.weights])

    def unflat(self, theta) -> "NetworkParams":
        out, pos = [], 0
        for w in self.weights:
            out.append(np.asarray(theta[pos:pos + w.size]).reshape(w.shape, order="F"))
            pos += w.size
        return self.replace(out)


@dataclass
class ForwardTrace:
    """Layer outputs ``phis[0..H+1]`` (``phis[0] = X``, ``phis[-1] = Yhat``) and
    preactivations ``pre[l-1] = phis[l-1] @ W^(l)`` for l = 1..H+1."""

    arch: NetworkArch
    phis: list
    pre: list

    @property
    def output(self) -> np.ndarray:
        return self.phis[-1]

    @property
    def m(self) -> int:
        return self.phis[0].shape[0]


@dataclass
class ActivationTensor:
    """``values[l-1][i, k]`` is the diagonal entry i of Lambda^{l,k}.

    ``exact_zero_hits`` counts kinked preactivations inside the ``eps_act``
    band (all assigned 0). ``nondifferentiable_hits`` drops those whose input
    row is identically zero: such an entry is locally constant in the
    parameters, so the loss stays differentiable there.
    ``min_abs_preactivation`` is taken over the remaining kinked entries.
    """

    values: list
    exact_zero_hits: int = 0
    nondifferentiable_hits: int = 0
    min_abs_preactivation: float = field(default=np.inf)

    @property
    def differentiable(self) -> bool:
        return self.nondifferentiable_hits == 0


def init_params(arch: NetworkArch, seed: int = 0, scale: float = 1.0) -> NetworkParams:
    """Gaussian weights with std ``scale / sqrt(fan_in)`` from a seeded PCG64 stream."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    widths = arch.widths
    ws = [rng.normal(0.0, scale / np.sqrt(widths[l - 1]), size=(widths[l - 1], widths[l]))
          for l in range(1, len(widths))]
    return NetworkParams(arch, tuple(ws))


def _layer_forward(arch: NetworkArch, layer: int, G: np.ndarray) -> np.ndarray:
    kinds = arch.unit_kinds(layer)
    if all(k.tag == "tanh" for k in kinds):
        return np.tanh(G)
    if any(k.tag == "tanh" for k in kinds):
        raise ValueError("tanh cannot be mixed with other activations in one layer")
    pos, neg = arch.slopes(layer)
    return kernels.apply_activation(np.ascontiguousarray(G), pos, neg)


def forward(params: NetworkParams, X) -> ForwardTrace:
    X = as_matrix(X, "X")
    arch = params.arch
    if X.shape[1] != arch.input_dim:
        raise ValueError(f"X has {X.shape[1]} columns, network expects {arch.input_dim}")
    phis, pre = [X], []
    H = arch.depth
    for l, W in enumerate(params.weights, start=1):
        G = phis[-1] @ W
        pre.append(G)
        phis.append(G if l == H + 1 else _layer_forward(arch, l, G))
    return ForwardTrace(arch, phis, pre)


def activation_patterns(trace: ForwardTrace, eps_act: float = EPS_ACT) -> ActivationTensor:
    """Activation derivatives at every hidden preactivation (0 inside the kink band)."""
    values, hits, nondiff, min_abs = [], 0, 0, np.inf
    for l in range(1, trace.arch.depth + 1):
        pos, neg = trace.arch.slopes(l)
        G = np.ascontiguousarray(trace.pre[l - 1])
        lam, h = kernels.pattern_derivatives(G, pos, neg, eps_act)
        values.append(lam)
        hits += int(h)
        kinked = pos != neg
        if kinked.any() and G.size:
            live = np.any(trace.phis[l - 1] != 0, axis=1)
            Gk = np.abs(G[live][:, kinked])
            if Gk.size:
                nondiff += int(np.count_nonzero(Gk <= eps_act))
                min_abs = min(min_abs, float(Gk.min()))
    return ActivationTensor(values, hits, nondiff, min_abs)


def loss(trace: ForwardTrace, Y) -> float:
    """``0.5 * ||Yhat - Y||_F^2``."""
    Y = as_matrix(Y, "Y")
    if Y.shape != trace.output.shape:
        raise ValueError(f"Y has shape {Y.shape}, predictions have {trace.output.shape}")
    R = trace.output - Y
    return 0.5 * float(np.sum(R * R))


class SubgradientWarning(RuntimeWarning):
    """A preactivation sits on a kink; the returned gradient is one subgradient."""


@dataclass
class Gradient:
    grads: list
    loss: float
    subgradient: bool = False
    trace: ForwardTrace | None = None
    patterns: ActivationTensor | None = None

    @property
    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.grads)))


def gradient(params: NetworkParams, X, Y, eps_act: float = EPS_ACT, warn: bool = True) -> Gradient:
    """Backpropagated ``dL/dW^(l)`` for every layer, using the activation pattern as derivative."""
    trace = forward(params, X)
    Y = as_matrix(Y, "Y")
    L = loss(trace, Y)
    pats = activation_patterns(trace, eps_act)
    delta = trace.output - Y
    H = params.arch.depth
    grads = [None] * (H + 1)
    for l in range(H + 1, 0, -1):
        grads[l - 1] = trace.phis[l - 1].T @ delta
        if l > 1:
            delta = (delta @ params.weights[l - 1].T) * pats.values[l - 2]
    flagged = pats.nondifferentiable_hits > 0
    if flagged and warn:
        warnings.warn(f"{pats.nondifferentiable_hits} preactivations within eps_act of a kink",
                      SubgradientWarning, stacklevel=2)
    return Gradient(grads, L, flagged, trace, pats)


# -- serialization ---------------------------------------------------------

def save_params(params: NetworkParams, directory, seed: int | None = None, scale: float | None = None) -> None:
    """Write ``W1.bin .. W{H+1}.bin`` plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for l, W in enumerate(params.weights, start=1):
        name = f"W{l}.bin"
        write_binary(d / name, W)
        files.append(name)
    manifest = {"arch": params.arch.to_json(), "seed": seed, "scale": scale, "layers": files}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_params(directory) -> NetworkParams:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    arch = NetworkArch.from_json(manifest["arch"])
    return NetworkParams(arch, tuple(read_binary(d / f) for f in manifest["layers"]))
