"""Time the compiled GMM kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --batch 2000 --components 8 --dim 16
"""

import argparse
import timeit

import numpy as np

from adaps import _pykernels

try:
    from adaps import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=2000)
    p.add_argument("--components", type=int, default=8)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    K, n = args.components, args.dim
    means = rng.normal(0, 2, (K, n))
    w = rng.uniform(0.1, 1.0, K)
    logw = np.log(w / w.sum())
    var = rng.uniform(0.05, 1.5, K)
    x = rng.standard_normal((args.batch, n))
    v = rng.standard_normal((args.batch, n))
    abar = 0.3

    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled kernels not built; timing the numpy fallback only")

    print(f"batch {args.batch}, components {K}, dim {n}, best of {args.repeat}")
    best = {}
    for kernel in ("gmm_denoise", "gmm_x0_vjp"):
        for name, mod in backends.items():
            fn = getattr(mod, kernel)
            call_args = (x, means, logw, var, abar) if kernel == "gmm_denoise" else (x, v, means, logw, var, abar)
            number = 10
            t = min(timeit.repeat(lambda: fn(*call_args), number=number, repeat=args.repeat)) / number
            best[kernel, name] = t
            print(f"{kernel:12s} {name:7s} {t * 1e3:9.3f} ms")
        if "cython" in backends:
            print(f"{kernel:12s} speedup {best[kernel, 'python'] / best[kernel, 'cython']:6.2f}x")


if __name__ == "__main__":
    main()
