"""Compare the compiled and pure-Python Kalman kernels.

Times the log-likelihood and the smoother on a panel of the default size
(200 plants, 14 measurements each) and checks that both backends agree.

    python3 benchmarks/bench_kalman.py [--plants 200] [--years 15] [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from cesmarkdown.kalman import get_backend


def make_segments(plants: int, years: int, rho: float, sigma_H: float, seed: int = 0):
    rng = np.random.default_rng(seed)
    T = years - 1
    xi = sigma_H * rng.standard_normal((plants, T))
    eps = rng.standard_normal((plants, years))
    y = xi + eps[:, 1:] - rho * eps[:, :-1]
    starts = np.arange(0, plants * T, T, dtype=np.int64)
    lengths = np.full(plants, T, dtype=np.int64)
    return np.ascontiguousarray(y.reshape(-1)), starts, lengths


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--plants", type=int, default=200)
    ap.add_argument("--years", type=int, default=15)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rho, s2 = 0.88, 0.725 ** 2
    y, starts, lengths = make_segments(args.plants, args.years, rho, 0.725)
    try:
        compiled = get_backend("compiled")
    except ImportError:
        compiled = None
    backends = {"python": get_backend("python")}
    if compiled is not None:
        backends["compiled"] = compiled

    results = {}
    print(f"{len(y)} measurements in {len(starts)} segments")
    print(f"{'backend':<10}{'loglik (ms)':>14}{'smooth (ms)':>14}")
    for name, kern in backends.items():
        ll = timeit.repeat(lambda: kern.filter_loglik(y, starts, lengths, rho, s2), number=1, repeat=args.repeat)
        sm = timeit.repeat(lambda: kern.smooth(y, starts, lengths, rho, s2), number=1, repeat=args.repeat)
        results[name] = (kern.filter_loglik(y, starts, lengths, rho, s2), kern.smooth(y, starts, lengths, rho, s2))
        print(f"{name:<10}{1e3 * min(ll):>14.2f}{1e3 * min(sm):>14.2f}")

    if compiled is None:
        print("compiled extension not built; only the fallback was timed")
        return
    ll_py, sm_py = results["python"]
    ll_c, sm_c = results["compiled"]
    gap = max(abs(ll_py - ll_c), *(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(sm_py[:3], sm_c[:3])))
    print(f"largest difference between backends: {gap:.2e}")


if __name__ == "__main__":
    main()
