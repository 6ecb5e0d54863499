"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py            # kernel timings
    python benchmarks/bench_kernels.py --train    # also one default training run per backend

Shapes follow the default pipeline: batches of 64 windows, w1 = 15, w2 = 11,
h = 32, on an 8-feature series.
"""
import argparse
import importlib
import os
import subprocess
import sys
import timeit

import numpy as np

from mwad.numeric import _kernels_py


def _cases(rng, n, w1, w2, h, batch):
    T = batch + w1 - 1 + w2
    X = rng.uniform(size=(T, n))
    W = rng.normal(size=(n, n)) * 0.3
    a = rng.normal(size=2 * n) * 0.3
    xs = rng.normal(size=(batch, w2, n))
    wx = rng.normal(size=(n, 4 * h)) * 0.2
    wh = rng.normal(size=(h, 4 * h)) * 0.2
    b = np.zeros(4 * h)
    dh = rng.normal(size=(batch, h))
    return (X, W, a, w1), (xs, wx, wh, b, dh)


def time_backend(mod, gat, lstm, repeat):
    X, W, a, w1 = gat
    xs, wx, wh, b, dh = lstm
    fwd = mod.gat_forward(X, W, a, w1, 0.2, True)
    dY = np.ones_like(fwd[0])
    lf = mod.lstm_forward(xs, wx, wh, b)
    jobs = {
        "gat_forward": lambda: mod.gat_forward(X, W, a, w1, 0.2, True),
        "gat_backward": lambda: mod.gat_backward(dY, X, W, a, *fwd[1:3], fwd[3], fwd[0], w1, 0.2, True),
        "lstm_forward": lambda: mod.lstm_forward(xs, wx, wh, b),
        "lstm_backward": lambda: mod.lstm_backward(dh, xs, wx, wh, *lf),
    }
    out = {}
    for name, fn in jobs.items():
        number = 20
        out[name] = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
    return out


def train_seconds(backend):
    code = (
        "import time\n"
        "from mwad.config import RunConfig\n"
        "from mwad.evaluate import run_pipeline\n"
        "from mwad.synth import default_config, generate\n"
        "ds = generate(default_config(0))\n"
        "t = time.perf_counter(); run_pipeline(ds, RunConfig()); print(time.perf_counter() - t)\n"
    )
    env = dict(os.environ)
    if backend == "python":
        env["MWAD_KERNELS"] = "python"
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--train", action="store_true", help="time a full default train/score run per backend")
    args = p.parse_args(argv)

    try:
        compiled = importlib.import_module("mwad.numeric._kernels")
    except ImportError:
        compiled = None
        print("compiled kernels are not built; showing the numpy fallback only")

    gat, lstm = _cases(np.random.default_rng(0), n=8, w1=15, w2=11, h=32, batch=64)
    py = time_backend(_kernels_py, gat, lstm, args.repeat)
    cy = time_backend(compiled, gat, lstm, args.repeat) if compiled else None

    print(f"{'kernel':<15}{'numpy (ms)':>12}{'cython (ms)':>13}{'speedup':>9}")
    for name, t in py.items():
        if cy:
            print(f"{name:<15}{t * 1e3:12.3f}{cy[name] * 1e3:13.3f}{t / cy[name]:8.1f}x")
        else:
            print(f"{name:<15}{t * 1e3:12.3f}{'-':>13}{'-':>9}")

    if args.train:
        print("\ndefault pipeline, synth fixture, seed 0")
        for backend in (["python", "compiled"] if compiled else ["python"]):
            print(f"  {backend:<9} {train_seconds(backend):7.2f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
