"""Compare the compiled and numpy backends of the ragged-sum kernel.

Times the raw kernel and a full gamma-Poisson Hessian evaluation at data
sizes similar to the worked example. Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from bbgp import kernels
from bbgp.design import load_spec
from bbgp.sim import SimSpec, sample_dataset


def kernel_case(rows, max_count, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.5, 5.0, rows)
    step = rng.uniform(0.1, 2.0, rows)
    count = rng.integers(0, max_count + 1, rows)
    return base, step, count


def time_kernel(repeat):
    print(f"{'rows':>8} {'max n':>6} {'order':>5} {'cython ms':>10} {'python ms':>10} {'speed-up':>9}")
    for rows, max_count in [(10_000, 20), (100_000, 30), (20_000, 300)]:
        args = kernel_case(rows, max_count)
        for order in (0, 2):
            out = {}
            for backend in ("cython", "python"):
                t = timeit.Timer(lambda: kernels.ragged_sums(*args, order=order, backend=backend))
                out[backend] = min(t.repeat(repeat, 1)) * 1e3
            print(f"{rows:>8} {max_count:>6} {order:>5} {out['cython']:>10.2f} {out['python']:>10.2f} "
                  f"{out['python'] / out['cython']:>8.1f}x")


def time_fit_in_subprocess(backend, units):
    """Fit time with a given backend; the backend is fixed at import, hence the subprocess."""
    code = (
        "import time, importlib.resources as r\n"
        "from bbgp.design import load_spec\n"
        "from bbgp.sim import SimSpec, sample_dataset\n"
        "from bbgp.infer import fit\n"
        "spec = load_spec(r.files('bbgp') / 'data' / 'parkinson_final.yaml')\n"
        f"cov, p, _ = spec.balanced_layout({units})\n"
        f"d = spec.build_designs(cov, {units}, p)\n"
        "data = sample_dataset(SimSpec(spec.coefficient_vector(), d, seed=1))\n"
        "t = time.perf_counter(); res = fit(data, d); t = time.perf_counter() - t\n"
        "print(t, res.converged)\n"
    )
    env = dict(os.environ, BBGP_PURE_PYTHON="1" if backend == "python" else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    seconds, converged = out.stdout.split()
    return float(seconds), converged == "True"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--units", type=int, default=2000)
    args = parser.parse_args(argv)
    if kernels.BACKEND != "cython":
        sys.exit("compiled extension not available; build it with 'pip install -e . --no-build-isolation'")
    time_kernel(args.repeat)
    print(f"\njoint fit, final model, {args.units} units")
    for backend in ("cython", "python"):
        seconds, ok = time_fit_in_subprocess(backend, args.units)
        print(f"  {backend:>6}: {seconds:.3f} s (converged={ok})")


if __name__ == "__main__":
    main()
