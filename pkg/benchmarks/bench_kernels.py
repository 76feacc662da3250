"""Compare the numba kernels against the numpy fallback.

Kernel timings run both implementations in one process. The end-to-end
number trains a small model for a few steps once per backend, each in a
fresh interpreter with ``MNMT_KERNELS`` set, so import-time selection is
exercised the same way users hit it.

    python3 benchmarks/bench_kernels.py [--rows 4096] [--dim 512] [--repeat 20]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mnmt_adapters.numerics import _kernels as K

E2E = """
import time, numpy as np
from mnmt_adapters.numerics import BACKEND
from mnmt_adapters.model import ModelConfig
from mnmt_adapters.synthetic import interference_task
from mnmt_adapters.text import Vocabulary, learn_bpe
from mnmt_adapters.training import TrainRun, train_base
train, _ = interference_task(n_train=200, seed=0)
bpe = learn_bpe(train, 200)
vocab = Vocabulary.build(bpe, ["en"])
cfg = ModelConfig(2, 2, 64, 128, 4, len(vocab), 64, 0.0, 0.1)
run = TrainRun(steps=3, warmup=10, max_tokens=512, patience=0, eval_every=10**9)
train_base(train, cfg, run, vocab, bpe)          # warm-up and JIT compile
t = time.perf_counter()
train_base(train, cfg, TrainRun(steps={steps}, warmup=10, max_tokens=512, patience=0, eval_every=10**9), vocab, bpe)
print(BACKEND, (time.perf_counter() - t) / {steps})
"""


def kernel_cases(rows, dim, rng):
    x = rng.normal(size=(rows, dim)).astype(np.float32)
    gain = np.ones(dim, dtype=np.float32)
    bias = np.zeros(dim, dtype=np.float32)
    dy = rng.normal(size=(rows, dim)).astype(np.float32)
    _, xhat, rstd = K.layer_norm_fwd_np(x, gain, bias, 1e-6)
    y = K.softmax_fwd_np(x)
    targets = rng.integers(0, dim, size=rows)
    weights = np.ones(rows, dtype=np.float32)
    return {
        "layer_norm_fwd": ((x, gain, bias, 1e-6), K.layer_norm_fwd_np, "layer_norm_fwd_nb"),
        "layer_norm_bwd": ((dy, xhat, gain, rstd), K.layer_norm_bwd_np, "layer_norm_bwd_nb"),
        "softmax_fwd": ((x,), K.softmax_fwd_np, "softmax_fwd_nb"),
        "softmax_bwd": ((y, dy), K.softmax_bwd_np, "softmax_bwd_nb"),
        "xent": ((x, targets, weights, 0.1), K.xent_np, "xent_nb"),
    }


def best_of(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=4096)
    ap.add_argument("--dim", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--e2e-steps", type=int, default=10, help="0 skips the end-to-end comparison")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"kernels on ({args.rows}, {args.dim}) float32, best of {args.repeat}")
    print(f"{'kernel':<16}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, (inputs, np_fn, nb_name) in kernel_cases(args.rows, args.dim, rng).items():
        t_np = best_of(np_fn, inputs, args.repeat)
        nb_fn = getattr(K, nb_name, None) if K.HAVE_NUMBA else None
        if nb_fn is None:
            print(f"{name:<16}{1e3 * t_np:>10.2f}{'n/a':>10}{'':>9}")
            continue
        nb_fn(*inputs)                                   # compile outside the timing
        t_nb = best_of(nb_fn, inputs, args.repeat)
        print(f"{name:<16}{1e3 * t_np:>10.2f}{1e3 * t_nb:>10.2f}{t_np / t_nb:>8.2f}x")

    if args.e2e_steps > 0:
        print(f"\ntraining step, d=64, mean of {args.e2e_steps} steps")
        for backend in ("numpy", "numba"):
            env = {**os.environ, "MNMT_KERNELS": backend}
            out = subprocess.run([sys.executable, "-c", E2E.format(steps=args.e2e_steps)], env=env,
                                 capture_output=True, text=True, check=True).stdout.split()
            print(f"{backend:<8} -> backend {out[0]:<6} {1e3 * float(out[1]):8.1f} ms/step")


if __name__ == "__main__":
    main()
