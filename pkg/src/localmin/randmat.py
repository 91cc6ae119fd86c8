"""Monte Carlo checks for the shallow-network random-data results.

For a one-hidden-layer net with a fixed activation pattern, the loss at a
differentiable local minimum is the energy of ``Y`` left after projecting out
the columns of ``Dt = [diag(Lam_1) X, ..., diag(Lam_d) X]``. With gaussian
data that design matrix has full rank ``min(d*d_x, m)`` with high
probability, which pins the loss to roughly ``(1 - d*d_x/m) ||Y||^2 / 2``
when ``d*d_x << m`` and to zero when ``d*d_x >> m``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .linalg import DEFAULT_CUTOFF, CutoffCriterion, as_matrix, column_space_basis, project_null

UNDER = "under"
OVER = "over"


def _regime(regime: str) -> str:
    r = str(regime).lower()
    if r.startswith("under"):
        return UNDER
    if r.startswith("over"):
        return OVER
    raise ValueError(f"regime must be 'under' or 'over', got {regime!r}")


def sample_gaussian(m: int, cols: int, seed) -> np.ndarray:
    if m < 1 or cols < 1:
        raise ValueError("m and cols must be >= 1")
    return np.random.default_rng(seed).standard_normal((m, cols))


def sample_pattern(m: int, d: int, seed, kind: str = "coin") -> np.ndarray:
    """i.i.d. fair-coin pattern: ``{0, 1}`` (ReLU-like) or ``{-1, 1}`` (abs-like)."""
    bits = np.random.default_rng(seed).integers(0, 2, size=(m, d)).astype(np.float64)
    if kind == "coin":
        return bits
    if kind == "sign":
        return 2.0 * bits - 1.0
    raise ValueError(f"unknown pattern kind {kind!r}")


def build_Dtilde(Lam, X) -> np.ndarray:
    Lam = as_matrix(Lam, "Lambda")
    X = as_matrix(X, "X")
    if Lam.shape[0] != X.shape[0]:
        raise ValueError(f"pattern has {Lam.shape[0]} rows, X has {X.shape[0]}")
    if np.abs(Lam).max(initial=0.0) > 1:
        raise ValueError("pattern entries must be bounded by 1 in absolute value")
    return kernels.dtilde(Lam, X)


def shallow_min_loss(Lam, X, Y, criterion: CutoffCriterion | str = DEFAULT_CUTOFF) -> float:
    """``0.5 * ||Y||^2 - 0.5 * ||P[Dt] Y||^2``, computed as ``0.5 * ||P_N[Dt] Y||^2``."""
    Y = as_matrix(Y, "Y")
    if Y.shape[1] != 1:
        raise ValueError("Y must be a single column")
    r = project_null(column_space_basis(build_Dtilde(Lam, X), criterion), Y)
    return 0.5 * float(np.sum(r * r))


@dataclass
class RankTrialResult:
    trial: int
    regime: str
    m: int
    d_x: int
    d: int
    observed_rank: int
    smallest_singular_value: float
    loss_ratio: float
    seed: str = ""


def run_trial(regime, m, d_x, d, seed, trial: int = 0, criterion=DEFAULT_CUTOFF,
              pattern: str = "coin") -> RankTrialResult:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, d_x))
    Lam = sample_pattern(m, d, rng, pattern)
    Y = rng.standard_normal((m, 1))
    Dt = kernels.dtilde(Lam, X)
    s = np.linalg.svd(Dt, compute_uv=False)
    basis = column_space_basis(Dt, criterion)
    r = project_null(basis, Y)
    return RankTrialResult(
        trial=trial, regime=_regime(regime), m=m, d_x=d_x, d=d,
        observed_rank=basis.rank,
        smallest_singular_value=float(s[-1]) if s.size else 0.0,
        loss_ratio=float(np.sum(r * r) / np.sum(Y * Y)),
        seed=str(seed if not isinstance(seed, (list, tuple)) else list(seed)),
    )


def rank_experiment(regime, m: int, d_x: int, d: int, trials: int, seed: int = 0,
                    criterion=DEFAULT_CUTOFF, pattern: str = "coin"):
    """Independent trials with per-trial seeds ``[seed, trial]``.

    Returns ``(results, summary)``. The summary holds the fraction of trials at
    full rank ``min(d*d_x, m)``, statistics of the loss ratio, and the
    predicted center ``(m - d*d_x)/m`` (0 when overparameterized).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    regime = _regime(regime)
    results = [run_trial(regime, m, d_x, d, [seed, t], t, criterion, pattern) for t in range(trials)]
    full = min(d * d_x, m)
    ratios = np.array([r.loss_ratio for r in results])
    summary = {
        "regime": regime, "m": m, "d_x": d_x, "d": d, "trials": trials, "seed": seed,
        "pattern": pattern, "criterion": CutoffCriterion.parse(criterion).value,
        "full_rank": full,
        "full_rank_trials": int(sum(r.observed_rank == full for r in results)),
        "full_rank_fraction": float(np.mean([r.observed_rank == full for r in results])),
        "loss_ratio_mean": float(ratios.mean()),
        "loss_ratio_std": float(ratios.std(ddof=1)) if trials > 1 else 0.0,
        "loss_ratio_quantiles": {q: float(np.quantile(ratios, float(q))) for q in ("0.05", "0.5", "0.95")},
        "predicted_ratio": max(m - d * d_x, 0) / m,
        "min_smallest_singular_value": float(min(r.smallest_singular_value for r in results)),
    }
    return results, summary


def pattern_condition_probe(Lam, regime, samples: int, seed=0, size: int | None = None):
    """Smallest observed ``s_min(Lam_I)`` over random row subsets ``I``.

    Subset sizes are drawn from the regime's allowed range (``|I| >= m/2``
    underparameterized, ``|I| <= d/2`` overparameterized) unless ``size`` fixes
    one. This is a spot check of the pattern condition, not a certificate.
    Returns ``(min_smin, sizes_tested)``.
    """
    Lam = as_matrix(Lam, "Lambda")
    m, d = Lam.shape
    regime = _regime(regime)
    rng = np.random.default_rng(seed)
    if regime == UNDER:
        lo, hi = math.ceil(m / 2), m
    else:
        lo, hi = 1, max(1, d // 2)
    lo, hi = min(lo, m), min(hi, m)
    best = np.inf
    sizes = set()
    for _ in range(samples):
        k = size if size is not None else int(rng.integers(lo, hi + 1))
        rows = rng.choice(m, size=k, replace=False)
        s = np.linalg.svd(Lam[rows], compute_uv=False)
        # min(k, d) singular values either way; for short-wide blocks this is the k-th
        best = min(best, float(s.min()))
        sizes.add(k)
    return best, sorted(sizes)


def prop2_conditions(regime, m: int, d_x: int, d: int, delta: float, t: float = 1.0) -> dict:
    """Evaluate the sample-size conditions and probability floors at these sizes.

    Reported only; the conditions need far larger ``m`` than desk runs use.
    """
    regime = _regime(regime)
    out = {"regime": regime, "delta": delta, "t": t}
    if delta <= 0:
        out.update(condition_met=False, probability_floor=None, note="delta must be positive")
        return out
    if regime == UNDER:
        log_term = math.log(d_x * d * m / delta ** 2)
        need = 64 * log_term ** 2 * d_x * d
        prob = 1 - math.exp(-m / (64 * log_term)) - 2 * math.exp(-t)
        out.update(required_m=need, condition_met=m >= need, probability_floor=prob,
                   ratio_bound=(1 + 6 * math.sqrt(t / m)) * (m - d_x * d) / m)
    else:
        need = 2 * m * math.log(m * d / delta) ** 2
        need_dx = math.log(d * m) ** 2
        out.update(required_d_dx=need, required_d_x=need_dx,
                   condition_met=(d * d_x >= need) and (d_x >= need_dx),
                   probability_floor=1 - 2 * math.exp(-d_x / 20))
    return out


def chi_ratio_reference(m: int, k: int, draws: int, seed) -> np.ndarray:
    """Samples of ``(z_1^2 + ... + z_k^2) / (z_1^2 + ... + z_m^2)`` from gaussians."""
    z = np.random.default_rng(seed).standard_normal((draws, m))
    z2 = z * z
    return z2[:, :k].sum(axis=1) / z2.sum(axis=1)


@dataclass
class TailCheck:
    n: int
    t: float
    trials: int
    upper_prob: float
    lower_prob: float
    upper_se: float
    lower_se: float
    bound: float
    upper_threshold: float
    lower_threshold: float

    @property
    def upper_ok(self) -> bool:
        return self.upper_prob <= self.bound + 3 * self.upper_se

    @property
    def lower_ok(self) -> bool:
        return self.lower_prob <= self.bound + 3 * self.lower_se

    def to_json(self) -> dict:
        return {**asdict(self), "upper_ok": self.upper_ok, "lower_ok": self.lower_ok}


def chi_square_tail_check(n: int, weights, t: float, trials: int, seed=0, chunk: int = 1 << 21) -> TailCheck:
    """Empirical two-sided tail frequencies of ``sum a_i^2 (g_i^2 - 1)``.

    Upper event: ``>= 2 sqrt(t) ||a^2||_2 + 2 K^2 t``; lower event:
    ``<= -2 sqrt(t) ||a^2||_2``; each is compared with ``exp(-t)`` plus three
    binomial standard errors. Gaussians are drawn in chunks of about ``chunk``
    numbers so memory stays flat.
    """
    a = np.broadcast_to(np.asarray(weights, dtype=np.float64), (n,)).copy()
    if np.any(a < 0):
        raise ValueError("weights must be nonnegative")
    K = float(a.max(initial=0.0))
    a2 = a * a
    root = math.sqrt(float(np.sum(a2 * a2)))
    upper = 2 * math.sqrt(t) * root + 2 * K * K * t
    lower = -2 * math.sqrt(t) * root
    if K == 0.0:
        # The statistic is identically 0 and both thresholds collapse to 0; no
        # deviation is possible, so the events are treated as empty.
        return TailCheck(n, t, trials, 0.0, 0.0, 0.0, 0.0, math.exp(-t), upper, lower)
    rng = np.random.default_rng(seed)
    rows = max(1, chunk // n)
    hi = lo = done = 0
    while done < trials:
        r = min(rows, trials - done)
        g = rng.standard_normal((r, n))
        h, l_ = kernels.chisq_tail_counts(g, a2, upper, lower)
        hi += int(h)
        lo += int(l_)
        done += r
    pu, pl = hi / trials, lo / trials
    return TailCheck(n, t, trials, pu, pl,
                     math.sqrt(pu * (1 - pu) / trials), math.sqrt(pl * (1 - pl) / trials),
                     math.exp(-t), upper, lower)
