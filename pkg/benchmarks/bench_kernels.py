"""Benchmark the compiled kernel backend against the pure-Python fallback.

Each kernel runs on trainer-sized buffers (batch 64, 256 inputs, 64 hidden,
7 classes) for a fixed repeat count under both backends; times come from
time.perf_counter and the same pre-filled buffers are reused so the work is
identical. With --train the script also times a short end-to-end training
run per backend.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--train]
"""

import argparse
import time
from array import array

from emorank import kernels
from emorank.numcore import Rng

# trainer-sized shapes: x(64x256) @ w1(256x64) -> h(64x64) @ w2(64x7)
N, K, H, C = 64, 256, 64, 7


def _filled(rng, size):
    return array("d", [rng.uniform(-1.0, 1.0) for _ in range(size)])


def make_workloads():
    rng = Rng(7)
    x = _filled(rng, N * K)
    w1 = _filled(rng, K * H)
    hid = _filled(rng, N * H)
    dh = _filled(rng, N * H)
    w2 = _filled(rng, H * C)
    logits = _filled(rng, N * C)
    probs = array("d", [0.0] * (N * C))
    bias = _filled(rng, H)
    sums = array("d", [0.0] * H)
    params = _filled(rng, K * H)
    grads = _filled(rng, K * H)
    m1 = array("d", [0.0] * (K * H))
    m2 = array("d", [0.0] * (K * H))
    out_nn = array("d", [0.0] * (N * H))
    out_nt = array("d", [0.0] * (N * K))
    out_tn = array("d", [0.0] * (K * H))

    return [
        ("matmul_nn 64x256x64",
         lambda: kernels.matmul_nn(x, w1, out_nn, N, K, H)),
        ("matmul_nt 64x64x256",
         lambda: kernels.matmul_nt(hid, w1, out_nt, N, H, K)),
        ("matmul_tn 256x64x64",
         lambda: kernels.matmul_tn(x, hid, out_tn, K, N, H)),
        ("add_row_vector 64x64",
         lambda: kernels.add_row_vector(hid, bias, N, H)),
        ("relu_inplace 4096",
         lambda: kernels.relu_inplace(hid, N * H)),
        ("relu_backward 4096",
         lambda: kernels.relu_backward_inplace(dh, hid, N * H)),
        ("col_sums 64x64",
         lambda: kernels.col_sums(hid, sums, N, H)),
        ("softmax_rows 64x7",
         lambda: kernels.softmax_rows(logits, probs, N, C)),
        ("adam_update 16384",
         lambda: kernels.adam_update(params, grads, m1, m2, K * H,
                                     5e-4, 0.9, 0.999, 1e-8, 0.1, 1e-3)),
    ]


def time_op(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_kernels(repeats):
    backends = kernels.available_backends()
    results = {}
    for backend in backends:
        kernels.set_backend(backend)
        for name, fn in make_workloads():
            results.setdefault(name, {})[backend] = time_op(fn, repeats)

    width = max(len(name) for name in results)
    header = f"{'kernel':<{width}}"
    for backend in backends:
        header += f"  {backend + ' (us)':>14}"
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    for name, timings in results.items():
        line = f"{name:<{width}}"
        for backend in backends:
            line += f"  {timings[backend] * 1e6:>14.2f}"
        if len(backends) == 2:
            line += f"  {timings['python'] / timings['compiled']:>7.1f}x"
        print(line)


def bench_train(epochs):
    import tempfile

    from emorank.dataio import ToyGenConfig, generate_toy_dataset, write_dataset
    from emorank.trainer import TrainConfig, train

    config = ToyGenConfig(n_train=210, n_eval=70, n_fr=70,
                          noise_sigma=0.05, seed=3)
    manifest, images = generate_toy_dataset(config)
    with tempfile.TemporaryDirectory() as root:
        data = root + "/d"
        write_dataset(data, manifest, images)
        print(f"\ntrain {epochs} epochs, 210 labeled / 70 unlabeled samples:")
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            start = time.perf_counter()
            train(TrainConfig(seed=1, epochs=epochs), data)
            elapsed = time.perf_counter() - start
            print(f"  {backend:<9} {elapsed:.2f}s")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200,
                        help="timed repetitions per kernel")
    parser.add_argument("--train", action="store_true",
                        help="also time a short end-to-end training run")
    parser.add_argument("--epochs", type=int, default=10,
                        help="epochs for the --train comparison")
    args = parser.parse_args()

    print(f"backends: {', '.join(kernels.available_backends())} "
          f"(default: {kernels.BACKEND})")
    bench_kernels(args.repeats)
    if args.train:
        bench_train(args.epochs)


if __name__ == "__main__":
    main()
