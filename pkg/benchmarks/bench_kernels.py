"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--sizes small,medium,mnist]

Both backends are fed identical inputs; the script also reports the largest
relative disagreement between them so a speedup never hides a wrong answer.
"""
import argparse
import timeit

import numpy as np

from convexity_lab.kernels import available_backends

SIZES = {
    # name: (N, widths)
    "small": (16, (4, 8, 8, 1)),
    "medium": (256, (32, 64, 64, 1)),
    "mnist": (1000, (784, 32, 16, 1)),
}


def make_case(N, widths, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((N, widths[0]))
    Ws = [rng.standard_normal((a, b)) * np.sqrt(2.0 / a) for a, b in zip(widths[:-1], widths[1:])]
    Xs = [rng.standard_normal(W.shape) for W in Ws]
    dy = rng.standard_normal(N)
    return A, Ws, Xs, dy


def kernel_calls(mod, A, Ws, Xs, dy):
    hs, zs = mod.forward(A, Ws)
    masks = [(z > 0).astype(np.float64) for z in zs]
    hs = mod.frozen_forward(A, Ws, masks)
    return {
        "forward": lambda: mod.forward(A, Ws),
        "backprop": lambda: mod.backprop(hs, Ws, masks, dy),
        "hvp": lambda: mod.hvp(hs, Ws, masks, dy, Xs, 1.0),
        "jet2": lambda: mod.jet2(hs, Ws, masks, Xs),
        "sq_jacobian_rows": lambda: mod.sq_jacobian_rows(hs, Ws, masks),
    }


def _flatten(out):
    if isinstance(out, np.ndarray):
        return [out]
    if isinstance(out, (float, int)):
        return [np.asarray(out, dtype=float)]
    return [a for item in out for a in _flatten(item)]


def max_rel_diff(a, b):
    worst = 0.0
    for x, y in zip(_flatten(a), _flatten(b)):
        scale = max(np.max(np.abs(x), initial=0.0), np.max(np.abs(y), initial=0.0), 1e-300)
        worst = max(worst, float(np.max(np.abs(x - y), initial=0.0)) / scale)
    return worst


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", default=",".join(SIZES))
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not importable; timing the numpy fallback only")
    print(f"{'size':<8} {'kernel':<18} " + " ".join(f"{b + ' (ms)':>14}" for b in backends)
          + f" {'speedup':>8} {'max rel diff':>13}")
    for name in args.sizes.split(","):
        N, widths = SIZES[name]
        A, Ws, Xs, dy = make_case(N, widths)
        calls = {b: kernel_calls(mod, A, Ws, Xs, dy) for b, mod in backends.items()}
        for kernel in calls["python"]:
            times = {}
            for b in backends:
                fn = calls[b][kernel]
                number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
                times[b] = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number * 1e3
            row = f"{name:<8} {kernel:<18} " + " ".join(f"{times[b]:>14.4f}" for b in backends)
            if "cython" in backends:
                diff = max_rel_diff(calls["python"][kernel](), calls["cython"][kernel]())
                row += f" {times['python'] / times['cython']:>7.2f}x {diff:>13.2e}"
            print(row)


if __name__ == "__main__":
    main()
