"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each kernel is run once untimed (so numba compiles or loads its cache),
checked for agreement between the two paths, then timed with timeit.
"""
import argparse
import timeit

import numpy as np

from localmin import kernels
from localmin._accel import USE_NUMBA


def _cases(scale: int):
    rng = np.random.default_rng(0)
    m = 512 * scale
    G = rng.standard_normal((m, 64))
    pos, neg = np.ones(64), np.where(np.arange(64) % 2, 0.0, -1.0)
    B = rng.standard_normal((2, m, 32))
    Phi = rng.standard_normal((m, 16))
    lams = [rng.integers(0, 2, (m, 16)).astype(float) for _ in range(3)]
    weights = [rng.standard_normal((8, 16)), rng.standard_normal((16, 16)), rng.standard_normal((16, 16)),
               rng.standard_normal((16, 2))]
    Lam = rng.integers(0, 2, (m * 4, 8)).astype(float)
    X = rng.standard_normal((m * 4, 4))
    g = rng.standard_normal((20000 * scale, 10))
    a2 = np.ones(10)
    return {
        "pattern_derivatives": ((G, pos, neg, 1e-12), {}),
        "apply_activation": ((G, pos, neg), {}),
        "layer_jacobian": ((B, Phi), {}),
        "back_chain": ((lams, weights, 2), {}),
        "dtilde": ((Lam, X), {}),
        "chisq_tail_counts": ((g, a2, 2 * np.sqrt(2 * 10) + 4, -2 * np.sqrt(2 * 10)), {}),
    }


def _same(a, b):
    if isinstance(a, (list, tuple)):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    args = ap.parse_args(argv)
    cases = _cases(1 if args.quick else 4)
    print(f"numba dispatch active: {USE_NUMBA}")
    print(f"{'kernel':<22}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, (a, kw) in cases.items():
        fn_np = getattr(kernels, f"{name}_numpy")
        fn_nb = getattr(kernels, f"{name}_numba")
        if not _same(fn_np(*a, **kw), fn_nb(*a, **kw)):
            raise SystemExit(f"{name}: numba and numpy paths disagree")
        t_np = min(timeit.repeat(lambda: fn_np(*a, **kw), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fn_nb(*a, **kw), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
