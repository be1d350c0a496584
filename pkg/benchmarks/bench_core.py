"""Time the compiled enumeration core against the pure-Python fallback.

    python benchmarks/bench_core.py [--repeat 3] [--large]

Each case runs once per backend with the result caches cleared, and the two
results are checked for agreement before the timings are reported.
"""
from __future__ import annotations

import argparse
import time
from collections.abc import Callable

import numpy as np

from walklab import _pycore
from walklab import exact_enum as E
from walklab.potential import Bernoulli, ExponentialMean1
from walklab.walk_model import WalkConfig

try:
    from walklab import _core
except ImportError:  # compiled core not built
    _core = None

CACHED = (E.fixed_stats, E.bridge_spectrum, E.plane_sum)


def _with(kernels, fn: Callable[[], object], repeat: int) -> tuple[float, object]:
    saved = E.kernels
    E.kernels = kernels
    best, out = float("inf"), None
    try:
        for _ in range(repeat):
            for f in CACHED:
                f.cache_clear()
            t0 = time.perf_counter()
            out = fn()
            best = min(best, time.perf_counter() - t0)
    finally:
        E.kernels = saved
        for f in CACHED:
            f.cache_clear()
    return best, out


def cases(large: bool) -> dict[str, tuple[Callable[[], object], Callable[[object], np.ndarray]]]:
    cfg = WalkConfig(2, 1.0)
    N = 10 if large else 8
    Nb = 30 if large else 20
    return {
        f"fixed-length enumeration d=2 N={N}": (
            lambda: E.fixed_stats(cfg, ExponentialMean1(), 0.5, N), lambda r: r.G),
        f"bridge spectrum d=2 L<=3 N<={Nb}": (
            lambda: E.bridge_spectrum(cfg, Bernoulli(0.5, 1.0), 0.3, 3, Nb, 1e-7, None, "bridge"), lambda r: r.W),
        f"irreducible spectrum d=2 L<=3 N<={Nb}": (
            lambda: E.bridge_spectrum(cfg, Bernoulli(0.5, 1.0), 0.3, 3, Nb, 1e-7, None, "irreducible"),
            lambda r: r.W),
        "hyperplane sum d=2 L=2 N<=16": (
            lambda: E.plane_sum(cfg, ExponentialMean1(), 0.3, 2, 16, 1e-7), lambda r: np.asarray(r[0])),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3, help="best of this many runs per backend")
    ap.add_argument("--large", action="store_true", help="bigger instances")
    args = ap.parse_args()
    if _core is None:
        raise SystemExit("compiled core is not built; run `pip install -e . --no-build-isolation`")
    print(f"{'case':42s} {'compiled [s]':>13s} {'python [s]':>11s} {'speedup':>8s}")
    for name, (fn, key) in cases(args.large).items():
        tc, rc = _with(_core, fn, args.repeat)
        tp, rp = _with(_pycore, fn, 1)
        if not np.allclose(key(rc), key(rp), rtol=1e-12, atol=1e-300):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:42s} {tc:13.4f} {tp:11.3f} {tp / tc:8.0f}x")


if __name__ == "__main__":
    main()
