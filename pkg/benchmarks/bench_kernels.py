"""Time the numpy and Cython kernel backends on representative inputs.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best-of-N time for each backend available
in this install, the speedup, and whether the outputs agree bit for bit.
"""
import argparse
import timeit

import numpy as np

from rebelhad.kernels import available_backends


def _cases():
    r = np.random.default_rng(0)
    xpad = r.standard_normal((16, 32, 66, 66))
    cols = r.standard_normal((16, 32 * 9, 64 * 64))
    field = r.standard_normal((64, 64))
    a = r.standard_normal((50, 50))
    sym = a + a.T
    return {
        "splitmix64_fill 1e6": lambda m: m.splitmix64_fill(12345, 1_000_000),
        "im2col 16x32x64x64 k3": lambda m: m.im2col(xpad, 3, 1, 64, 64),
        "col2im 16x32x64x64 k3": lambda m: m.col2im(cols, 32, 66, 66, 3, 1, 64, 64),
        "box_blur 64x64 r4": lambda m: m.box_blur(field, 4),
        "jacobi_eigh 50x50": lambda m: m.jacobi_eigh(sym),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return a.shape == b.shape and np.array_equal(a, b)
    return a == b


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy backend only")
    names = list(backends)
    print(f"{'kernel':<24}" + "".join(f"{n + ' ms':>12}" for n in names) + f"{'speedup':>10}{'equal':>8}")
    for label, fn in _cases().items():
        best, outs = {}, {}
        for name, mod in backends.items():
            outs[name] = fn(mod)
            best[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
        row = f"{label:<24}" + "".join(f"{best[n]:>12.2f}" for n in names)
        if len(names) == 2:
            row += f"{best['numpy'] / best['cython']:>9.1f}x{str(_same(outs['numpy'], outs['cython'])):>8}"
        print(row)


if __name__ == "__main__":
    main()
