"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both implementations are importable side by side, so one process can compare
them.  The numba timings exclude compilation (one warm-up call each).
"""

import argparse
import timeit

import numpy as np

from uavsense import _kernels as K


def cases(rng):
    a = rng.uniform(0, 20, 20000)
    b = rng.uniform(0, 25, 20000)
    yield "marcum_q1 (20k points)", K.marcum_q1_numba, K.marcum_q1_numpy, (a, b)
    probs = rng.random((729, 5, 3))
    yield "uplink_dp (729 profiles, N=3, T_u=5)", K.uplink_dp_numba, K.uplink_dp_numpy, (probs, 1)
    probs5 = rng.random((81, 5, 5))
    yield "uplink_dp (81 profiles, N=5, T_u=5)", K.uplink_dp_numba, K.uplink_dp_numpy, (probs5, 2)
    tx = rng.random((5, 3))
    success = rng.random((100000, 5, 3)) < 0.5
    yield "transmit_batch (100k trials, N=3)", K.transmit_batch_numba, K.transmit_batch_numpy, (tx, 1, success)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"numba available: {K.HAVE_NUMBA}; default backend: {K.BACKEND}")
    print(f"{'kernel':42s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s}")
    for name, fast, slow, call_args in cases(np.random.default_rng(0)):
        ref = slow(*call_args)
        got = fast(*call_args)
        assert np.allclose(got, ref, atol=1e-12), name
        t_fast = min(timeit.repeat(lambda: fast(*call_args), number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(lambda: slow(*call_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:42s} {t_fast:11.2f} {t_slow:11.2f} {t_slow / t_fast:8.1f}x")


if __name__ == "__main__":
    main()
