"""Compare the compiled kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on
both backends directly; the training-step timing launches one subprocess
per backend so the whole package picks up the selected implementation.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from copula_dib import _fallback

try:
    from copula_dib import _kernels
except ImportError:
    _kernels = None

STEP_SNIPPET = r"""
import json, timeit
import numpy as np
from copula_dib import kernels
from copula_dib.datasets import SpiralConfig, gen_spiral, split
from copula_dib.experiments import SweepConfig, _train_setup, _step
from copula_dib.nn import Rng
x, y = gen_spiral(SpiralConfig(n_samples=5000, seed=0))
data = split(x, y, 0.2, Rng(1))
model, xs, ys, states, batches, noise = _train_setup(SweepConfig(total_iterations=1000), data)
it = [0]
def one():
    _step(model, xs, ys, batches.next(), states, noise, it[0]); it[0] += 1
one()
n = {n}
print(json.dumps({{"backend": kernels.BACKEND, "seconds": min(timeit.repeat(one, number=n, repeat=3)) / n}}))
"""


def _time(fn, number):
    return min(timeit.repeat(fn, number=number, repeat=5)) / number


def kernel_cases():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(500, 50)) * 3
    u = rng.uniform(0, 1, 2000)
    return {
        "softplus_forward 500x50": (lambda m: (lambda: m.softplus_forward(z)), 2000),
        "counter_uniform 1e5": (lambda m: (lambda: m.counter_uniform(12345, 0, 100_000)), 200),
        # shapes of the default beta(2, 5) and gamma(2, 2) margin transforms
        "betainc 2000": (lambda m: (lambda: m.betainc(2.0, 5.0, u)), 50),
        "gammainc 2000": (lambda m: (lambda: m.gammainc(2.0, 8.0 * u, False)), 50),
    }


def step_timing(pure: bool, n: int) -> dict:
    env = dict(os.environ)
    if pure:
        env["COPULA_DIB_PURE_PYTHON"] = "1"
    else:
        env.pop("COPULA_DIB_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(n=n)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200, help="training steps per timing")
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not available; only the fallback can be timed", file=sys.stderr)
    rows = []
    for name, (make, number) in kernel_cases().items():
        t_py = _time(make(_fallback), number)
        t_cy = _time(make(_kernels), number) if _kernels is not None else float("nan")
        rows.append({"kernel": name, "cython_s": t_cy, "python_s": t_py, "speedup": t_py / t_cy})
    cy = step_timing(False, args.steps) if _kernels is not None else {"seconds": float("nan")}
    py = step_timing(True, args.steps)
    rows.append({"kernel": "training step (batch 500)", "cython_s": cy["seconds"],
                 "python_s": py["seconds"], "speedup": py["seconds"] / cy["seconds"]})
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'kernel':28s} {'cython':>12s} {'python':>12s} {'speedup':>8s}")
    for r in rows:
        print(f"{r['kernel']:28s} {r['cython_s'] * 1e3:10.3f}ms {r['python_s'] * 1e3:10.3f}ms "
              f"{r['speedup']:7.2f}x")


if __name__ == "__main__":
    main()
