"""Micro-benchmark: compiled kernels vs. NumPy reference.

Times the four hot kernels on verification-sized matrices and one
end-to-end branch-and-bound query per backend.

    python3 benchmarks/bench_kernels.py [--repeat 2000]
"""

import argparse
import time

import numpy as np

from favex._kernels import reference

try:
    from favex._kernels import _native as native
except ImportError:
    native = None


def timeit(fn, args, repeat):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    d, width, k, batch = 64, 10, 10, 128
    w1 = rng.normal(size=(width, d))
    b1 = rng.normal(size=width)
    lo = rng.uniform(0.0, 0.4, size=d)
    hi = lo + 0.2
    a = rng.normal(size=(k - 1, width))
    bias = rng.normal(size=k - 1)
    nlo = rng.normal(size=width) - 0.5
    nhi = nlo + rng.uniform(0.1, 1.0, size=width)
    ws = [w1, rng.normal(size=(width, width)), rng.normal(size=(k, width))]
    bs = [b1, rng.normal(size=width), rng.normal(size=k)]
    xs = rng.uniform(size=(batch, d))

    cases = [
        ("affine_interval (10x64)", "affine_interval", (w1, b1, lo, hi)),
        ("relu_backward_lower (9x10)", "relu_backward_lower", (a, bias, nlo, nhi)),
        ("linear_box_lower (9x10)", "linear_box_lower",
         (rng.normal(size=(k - 1, d)), bias, lo, hi, (lo + hi) / 2)),
        (f"forward_batch ({batch}x{d})", "forward_batch", (ws, bs, xs)),
        (f"margin_grad_batch ({batch}x{d})", "margin_grad_batch", (ws, bs, xs, 0)),
    ]

    print(f"{'kernel':34} {'reference':>12} {'native':>12} {'speedup':>9}")
    for label, name, args in cases:
        t_ref = timeit(getattr(reference, name), args, repeat)
        if native is not None:
            t_nat = timeit(getattr(native, name), args, repeat)
            print(f"{label:34} {t_ref * 1e6:10.2f}us {t_nat * 1e6:10.2f}us "
                  f"{t_ref / t_nat:8.2f}x")
        else:
            print(f"{label:34} {t_ref * 1e6:10.2f}us {'n/a':>12} {'':>9}")


def _branching_instance():
    """Seeded random classifier whose query needs ~1400 splits."""
    from favex import make_network, AffineLayer, ReluLayer

    rng = np.random.default_rng(15)
    d, k = 12, 4
    widths = [int(rng.integers(2, 11)) for _ in range(2)]
    dims = [d] + widths + [k]
    layers = []
    for i, (m, n) in enumerate(zip(dims, dims[1:])):
        if i > 0:
            layers.append(ReluLayer(width=m))
        layers.append(AffineLayer(
            rng.normal(0.0, 3.0 / np.sqrt(m), size=(n, m)),
            rng.normal(0.0, 0.3, size=n),
        ))
    net = make_network("bench", d, layers)
    x = rng.uniform(net.input_lower, net.input_upper)
    n_active = int(rng.integers(1, d + 1))
    active = frozenset(int(i) for i in rng.choice(d, size=n_active, replace=False))
    eps = float(rng.uniform(0.3, 0.5))
    return net, x, active, eps


def bench_verify():
    from favex import BoundMethod, RobustnessQuery, verify
    from favex import _kernels

    net, x, active, eps = _branching_instance()
    q = RobustnessQuery.from_input(net, x, active, eps)
    print(f"\nend-to-end verify (branch-heavy query), backend={_kernels.BACKEND}")
    t0 = time.perf_counter()
    v = verify(net, q, timeout=60.0, method=BoundMethod.LINEAR_RELAXATION)
    dt = time.perf_counter() - t0
    print(f"  status={int(v.status):+d} nodes={v.stats.nodes_expanded} "
          f"bounds={v.stats.bound_calls} time={dt * 1e3:.0f}ms")
    print("  (set FAVEX_KERNELS=reference and re-run to compare backends)")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args()
    if native is None:
        print("note: compiled kernels unavailable, timing reference only\n")
    bench_kernels(args.repeat)
    bench_verify()
