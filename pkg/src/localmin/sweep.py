"""Synthetic data generation and the depth x width sweep of sqrt(J).

Each grid cell builds a ReLU net of uniform hidden width, evaluates ``J`` at
initialization, trains it with mini-batch SGD and evaluates again. Cells
are independent and seeded from ``(seed, H, d)``, so they can run in worker
processes and still give the same files.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .linalg import DEFAULT_CUTOFF, CutoffCriterion, as_matrix
from .minima import DEFAULT_MEMORY_CAP, MemoryCapError, analyze_point, estimate_bytes
from .network import ActivationKind, NetworkArch, forward, init_params
from .trainer import TrainConfig, train_sgd

DESK_DATA = {"depth": 3, "width": 16, "input_dim": 6, "output_dim": 1, "m": 512, "scale": 2.0}
PAPER_DATA = {"depth": 7, "width": 50, "input_dim": 10, "output_dim": 1, "m": 5000, "scale": 2.0}
PHASES = ("init", "trained")


def gen_synthetic(seed: int = 0, depth: int = 3, width: int = 16, input_dim: int = 6, output_dim: int = 1,
                  m: int = 512, scale: float = 2.0):
    """Gaussian inputs pushed through a random tanh network.

    Returns ``(X, Y, manifest)``; the manifest records every size and seed.
    """
    rng = np.random.default_rng([seed, 0])
    X = rng.standard_normal((m, input_dim))
    arch = NetworkArch(input_dim, output_dim, (width,) * depth, ActivationKind.tanh())
    truth = init_params(arch, seed=[seed, 1], scale=scale)
    Y = forward(truth, X).output
    manifest = {"seed": seed, "depth": depth, "width": width, "input_dim": input_dim,
                "output_dim": output_dim, "m": m, "scale": scale, "activation": "tanh",
                "profile": "paper" if (depth, width, input_dim, m) == (7, 50, 10, 5000) else "desk"}
    return X, Y, manifest


@dataclass
class SweepConfig:
    depths: tuple = (1, 2, 3)
    widths: tuple = (2, 4, 8, 16)
    train: TrainConfig = field(default_factory=TrainConfig.synthetic)
    analyze_at: str = "both"
    seed: int = 0
    activation: str = "relu"
    init_scale: float = 1.0
    criterion: str = DEFAULT_CUTOFF.value
    memory_cap: int = DEFAULT_MEMORY_CAP

    def __post_init__(self):
        self.depths = tuple(int(h) for h in self.depths)
        self.widths = tuple(int(d) for d in self.widths)
        if not self.depths or not self.widths:
            raise ValueError("depth and width grids must be non-empty")
        if min(self.depths) < 1 or min(self.widths) < 1:
            raise ValueError("depths and widths must be >= 1")
        if self.analyze_at not in {"init", "trained", "both"}:
            raise ValueError("analyze_at must be init, trained or both")
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_json(self.train)
        self.criterion = CutoffCriterion.parse(self.criterion).value

    def phases(self):
        return PHASES if self.analyze_at == "both" else (self.analyze_at,)

    def check_caps(self, m: int, input_dim: int, output_dim: int) -> None:
        for H in self.depths:
            for d in self.widths:
                need = estimate_bytes(m, (input_dim,) + (d,) * H + (output_dim,))
                if need > self.memory_cap:
                    raise MemoryCapError(f"cell H={H}, d={d} needs ~{need / 2**20:.1f} MiB, "
                                         f"cap is {self.memory_cap / 2**20:.1f} MiB")

    def to_json(self) -> dict:
        out = asdict(self)
        out["train"] = self.train.to_json()
        out["depths"], out["widths"] = list(self.depths), list(self.widths)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SweepConfig":
        known = {k: obj[k] for k in cls.__dataclass_fields__ if k in obj}
        return cls(**known)


@dataclass
class SweepCell:
    H: int
    d: int
    phase: str
    sqrt_J: float
    L: float
    grad_norm: float
    error: str = ""


def cell_seed(seed: int, H: int, d: int) -> int:
    return int(np.random.SeedSequence([seed, H, d]).generate_state(1)[0])


def run_cell(cfg: SweepConfig, H: int, d: int, X, Y) -> list[SweepCell]:
    """Init-phase and trained-phase cells for one grid point."""
    s = cell_seed(cfg.seed, H, d)
    arch = NetworkArch(X.shape[1], Y.shape[1], (d,) * H, cfg.activation)
    params = init_params(arch, seed=s, scale=cfg.init_scale)
    phases = cfg.phases()
    cells = []

    def record(phase, p):
        rep = analyze_point(p, X, Y, cfg.criterion, memory_cap=cfg.memory_cap)
        cells.append(SweepCell(H, d, phase, math.sqrt(max(rep.J_direct, 0.0)), rep.L, rep.grad_norm))

    try:
        if "init" in phases:
            record("init", params)
        if "trained" in phases:
            train = TrainConfig(**{**cfg.train.to_json(), "seed": s})
            trained, _ = train_sgd(params, X, Y, train)
            record("trained", trained)
    except (ArithmeticError, MemoryError, ValueError, np.linalg.LinAlgError) as exc:
        done = {c.phase for c in cells}
        for phase in phases:
            if phase not in done:
                cells.append(SweepCell(H, d, phase, math.nan, math.nan, math.nan,
                                       f"{type(exc).__name__}: {exc}"))
    return cells


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(cfg: SweepConfig, X, Y, jobs: int = 1) -> list[SweepCell]:
    """All cells in grid order (depth-major, then width, then phase)."""
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
    cfg.check_caps(X.shape[0], X.shape[1], Y.shape[1])
    tasks = [(cfg, H, d, X, Y) for H in cfg.depths for d in cfg.widths]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            groups = list(pool.map(_run_cell_args, tasks))
    else:
        groups = [_run_cell_args(t) for t in tasks]
    return [c for g in groups for c in g]


def write_cells_csv(path, cells) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["H", "d", "phase", "sqrt_J", "L", "grad_norm", "error"])
        for c in cells:
            w.writerow([c.H, c.d, c.phase, format(c.sqrt_J, ".17g"), format(c.L, ".17g"),
                        format(c.grad_norm, ".17g"), c.error])


def read_cells_csv(path) -> list[SweepCell]:
    with open(path, newline="") as fh:
        return [SweepCell(int(r["H"]), int(r["d"]), r["phase"], float(r["sqrt_J"]), float(r["L"]),
                          float(r["grad_norm"]), r["error"]) for r in csv.DictReader(fh)]


# -- SVG heat map ------------------------------------------------------------

def _color(frac: float) -> str:
    # light yellow -> dark blue; NaN cells are grey
    if not math.isfinite(frac):
        return "#bbbbbb"
    lo, hi = np.array([255, 247, 188]), np.array([8, 48, 107])
    r, g, b = (lo + (hi - lo) * min(max(frac, 0.0), 1.0)).round().astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(cells, depths, widths, title: str, cell_px: int = 60) -> str:
    """One rectangle per (H, d); rows are depths (largest on top), columns widths.

    Colors use a linear scale from 0 to the largest finite sqrt(J) in the
    figure, which is stored in the ``<metadata>`` element.
    """
    vals = {(c.H, c.d): c.sqrt_J for c in cells}
    finite = [v for v in vals.values() if math.isfinite(v)]
    vmax = max(finite) if finite else 0.0
    left, top = 70, 40
    width = left + cell_px * len(widths) + 20
    height = top + cell_px * len(depths) + 50
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<metadata>{escape(json.dumps({"scale": "linear", "vmin": 0.0, "vmax": vmax}))}</metadata>',
           f'<text x="{width / 2:g}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for i, H in enumerate(sorted(depths, reverse=True)):
        y = top + i * cell_px
        out.append(f'<text x="{left - 8}" y="{y + cell_px / 2 + 4:g}" text-anchor="end" font-size="12">{H}</text>')
        for j, d in enumerate(widths):
            x = left + j * cell_px
            v = vals.get((H, d), math.nan)
            frac = v / vmax if vmax > 0 and math.isfinite(v) else (0.0 if math.isfinite(v) else math.nan)
            label = "err" if not math.isfinite(v) else format(v, ".3g")
            out.append(f'<rect x="{x}" y="{y}" width="{cell_px}" height="{cell_px}" fill="{_color(frac)}" '
                       f'stroke="#ffffff" data-depth="{H}" data-width="{d}"><title>H={H} d={d} sqrt(J)={label}</title></rect>')
            ink = "#ffffff" if math.isfinite(frac) and frac > 0.55 else "#000000"
            out.append(f'<text x="{x + cell_px / 2:g}" y="{y + cell_px / 2 + 4:g}" text-anchor="middle" '
                       f'font-size="11" fill="{ink}">{label}</text>')
    base = top + cell_px * len(depths)
    for j, d in enumerate(widths):
        out.append(f'<text x="{left + j * cell_px + cell_px / 2:g}" y="{base + 16}" text-anchor="middle" '
                   f'font-size="12">{d}</text>')
    out.append(f'<text x="{left + cell_px * len(widths) / 2:g}" y="{base + 38}" text-anchor="middle" '
               f'font-size="12">width</text>')
    out.append(f'<text x="14" y="{top + cell_px * len(depths) / 2:g}" font-size="12" '
               f'transform="rotate(-90 14 {top + cell_px * len(depths) / 2:g})" text-anchor="middle">depth</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_sweep_outputs(out_dir, cfg: SweepConfig, cells) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"cells": out / "cells.csv"}
    write_cells_csv(paths["cells"], cells)
    for phase in cfg.phases():
        p = out / f"heatmap_{phase}.svg"
        p.write_text(heatmap_svg([c for c in cells if c.phase == phase], cfg.depths, cfg.widths,
                                 f"sqrt(J), {phase}"))
        paths[phase] = p
    return paths


def median_by_width(cells, phase: str) -> dict:
    out = {}
    for d in sorted({c.d for c in cells}):
        vals = [c.sqrt_J for c in cells if c.d == d and c.phase == phase and math.isfinite(c.sqrt_J)]
        out[d] = float(np.median(vals)) if vals else math.nan
    return out


def trained_not_worse_fraction(cells, floor: float = 0.0) -> float:
    """Fraction of grid points where trained sqrt(J) <= init sqrt(J) + floor."""
    init = {(c.H, c.d): c.sqrt_J for c in cells if c.phase == "init"}
    pairs = [(init[(c.H, c.d)], c.sqrt_J) for c in cells if c.phase == "trained" and (c.H, c.d) in init]
    if not pairs:
        return math.nan
    return float(np.mean([b <= a + floor for a, b in pairs]))
