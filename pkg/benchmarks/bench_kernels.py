"""Time the numba-compiled kernels against their vectorized numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Both implementations are called directly, so the comparison works whatever
SUBVP_DISABLE_NUMBA says; with numba disabled the "loops" column is plain
interpreted Python and is skipped for the large cases.
"""

import argparse
import math
import timeit
import warnings

import numpy as np

from subvp import backend, saliency
from subvp.nn import kernels


def best_ms(fn, repeat):
    fn()  # warm-up (and JIT compile)
    return 1000.0 * min(timeit.repeat(fn, number=1, repeat=repeat))


def cases(rng):
    x = rng.standard_normal((16, 8, 32, 64)).astype(np.float32)
    w = rng.standard_normal((16, 8, 3, 3)).astype(np.float32)
    b = rng.standard_normal(16).astype(np.float32)
    dy = rng.standard_normal((16, 16, 32, 64)).astype(np.float32)
    pooled, arg = kernels.maxpool2_forward_numpy(x)
    dpool = rng.standard_normal(pooled.shape).astype(np.float32)
    phi = rng.uniform(0, 2 * math.pi, (32, 18))
    theta = rng.uniform(0, math.pi, (32, 18))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = saliency.SaliencyConfig()
    return [
        ("conv3x3 forward", lambda: kernels.conv3x3_forward_loops(x, w, b),
         lambda: kernels.conv3x3_forward_numpy(x, w, b)),
        ("conv3x3 backward", lambda: kernels.conv3x3_backward_loops(dy, x, w),
         lambda: kernels.conv3x3_backward_numpy(dy, x, w)),
        ("maxpool2 forward", lambda: kernels.maxpool2_forward_loops(x),
         lambda: kernels.maxpool2_forward_numpy(x)),
        ("maxpool2 backward", lambda: kernels.maxpool2_backward_loops(dpool, arg),
         lambda: kernels.maxpool2_backward_numpy(dpool, arg)),
        ("saliency frames", lambda: saliency.saliency_frames(phi, theta, cfg, kernel=saliency._frames_loops),
         lambda: saliency.saliency_frames(phi, theta, cfg, kernel=saliency._frames_numpy)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    compiled = backend() == "numba"
    print(f"active backend: {backend()}")
    print(f"{'kernel':<20} {'loops ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, loops, vec in cases(np.random.default_rng(args.seed)):
        t_vec = best_ms(vec, args.repeat)
        if compiled:
            t_loop = best_ms(loops, args.repeat)
            print(f"{name:<20} {t_loop:>10.2f} {t_vec:>10.2f} {t_vec / t_loop:>7.2f}x")
        else:
            print(f"{name:<20} {'skipped':>10} {t_vec:>10.2f} {'-':>8}")


if __name__ == "__main__":
    main()
