"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes are those of a desk-scale training batch (32 documents of 80 tokens,
32-dim embeddings, 32 filters) and of a full-size one (300/300).
"""
import argparse
import timeit

import numpy as np

from dactext import _kernels_py as py
from dactext.stats import _log_factorials

try:
    from dactext import _kernels as compiled
except ImportError:
    compiled = None


def conv_case(B, L, D, F, w, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(B, L, D))
    lengths = rng.integers(w, L + 1, size=B).astype(np.int64)
    k = rng.normal(size=(F, w, D)) * 0.1
    b = np.zeros(F)
    pooled, arg = py.conv_relu_maxpool(x, lengths, k, b)
    g = rng.normal(size=pooled.shape)
    ids = rng.integers(0, 2000, size=(B, L))
    return {
        "conv forward": lambda m: m.conv_relu_maxpool(x, lengths, k, b),
        "conv backward": lambda m: m.conv_maxpool_backward(x, arg, pooled, g, k),
        "embedding scatter": lambda m: m.scatter_add_rows(np.zeros((2000, D)), ids, x),
    }


def fisher_case():
    lg = _log_factorials(640)
    return {"fisher 2x3 (n=640)": lambda m: m.fisher_2x3_sums(320, 250, 170, 220, -150.0, 1e-9, lg)}


def best_of(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if compiled is None:
        print("compiled extension not built; only the numpy fallback is available")
    cases = [("B=32 L=80 D=32 F=32 w=4", conv_case(32, 80, 32, 32, 4)),
             ("B=32 L=300 D=300 F=300 w=4", conv_case(32, 300, 300, 300, 4)),
             ("", fisher_case())]
    print(f"{'kernel':<22}{'shape':<28}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}")
    for shape, fns in cases:
        for name, fn in fns.items():
            t_py = best_of(lambda: fn(py), args.repeat)
            if compiled is None:
                print(f"{name:<22}{shape:<28}{1e3 * t_py:>10.3f}{'-':>13}{'-':>9}")
                continue
            t_c = best_of(lambda: fn(compiled), args.repeat)
            print(f"{name:<22}{shape:<28}{1e3 * t_py:>10.3f}{1e3 * t_c:>13.3f}{t_py / t_c:>8.2f}x")


if __name__ == "__main__":
    main()
