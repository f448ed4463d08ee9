"""Time one training epoch and one batched prediction on each kernel backend.

    python3 benchmarks/bench_kernels.py [--n 2000] [--width 64] [--depth 3] [--repeat 5]

Both backends run on identical inputs; the script also reports the largest
parameter difference after the timed epochs as a parity check.
"""

import argparse
import time

import numpy as np

from surge_al._backend import available_backends
from surge_al.nnet import Architecture, init_network


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(kernels, arch, X, y, batch_size, repeat):
    sizes = np.asarray(arch.sizes, dtype=np.intp)
    theta = init_network(arch, 0).theta.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    order = np.random.default_rng(1).permutation(X.shape[0]).astype(np.intp)
    state = {"t": 0}

    def epoch():
        _, state["t"] = kernels.train_epoch(theta, m, v, state["t"], sizes, X, y, order,
                                            batch_size, 1e-3, 0.9, 0.999, 1e-8,
                                            arch.tanh_scale, 1e-6)

    def predict():
        kernels.predict(theta, sizes, X, arch.tanh_scale, 1e-6)

    return _best(epoch, repeat), _best(predict, repeat), theta


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    arch = Architecture(5, (args.width,) * args.depth)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(args.n, 5))
    y = np.tanh(X[:, 0]) + 0.1 * rng.standard_normal(args.n)

    backends = available_backends()
    print(f"{args.n} samples, hidden {arch.hidden_dims}, batch {args.batch_size}, "
          f"best of {args.repeat}")
    print(f"{'backend':>8}  {'epoch [ms]':>11}  {'predict [ms]':>12}")
    results = {}
    for name in sorted(backends):
        ep, pr, theta = bench(backends[name], arch, X, y, args.batch_size, args.repeat)
        results[name] = (ep, pr, theta)
        print(f"{name:>8}  {ep * 1e3:>11.2f}  {pr * 1e3:>12.2f}")
    if "cython" in results:
        py, cy = results["python"], results["cython"]
        print(f"speedup  epoch x{py[0] / cy[0]:.2f}, predict x{py[1] / cy[1]:.2f}")
        print(f"max |theta_cython - theta_python| after {args.repeat} epochs: "
              f"{np.max(np.abs(py[2] - cy[2])):.2e}")
    else:
        print("compiled backend not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
