"""Compare the numba and numpy kernel backends.

Part 1 times each kernel pair directly (both implementations live in
``poolprev.kernels`` regardless of the backend switch). Part 2 runs a short
study-1 fit end to end in a subprocess per backend, selected through
``POOLPREV_DISABLE_NUMBA``.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--skip-fit]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from poolprev import kernels
from poolprev.observation import likelihood_terms
from poolprev.studygen import generate_synthetic, preset

FIT_SNIPPET = """
import time
from poolprev import inference, studygen
from poolprev._backend import backend_name
_, _, pooled, _ = studygen.generate_synthetic(studygen.preset("study1"), 1)
cfg = inference.SamplerConfig(seed=1, chains=1, warmup={warmup}, draws={draws})
inference.run_mcmc(pooled, inference.SamplerConfig(seed=0, chains=1, warmup=5, draws=5))
t0 = time.perf_counter()
inference.run_mcmc(pooled, cfg)
print(backend_name(), time.perf_counter() - t0)
"""


def _time(fn, repeat):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(seed=0):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 1000, 150))
    _, _, pooled, _ = generate_synthetic(preset("study1"), seed)
    terms = likelihood_terms(pooled).args()
    f = rng.normal(-2.0, 0.5, len(pooled.grid))
    big = rng.normal(0.0, 3.0, 100_000)
    log1mp = np.log1p(-rng.uniform(0.01, 0.3, len(pooled.grid)))
    return [
        ("sq_exp_cov (150x150)", lambda k: k.sq_exp_cov(t, t, 0.5, 100.0)),
        ("sq_exp_cov_sym (150)", lambda k: k.sq_exp_cov_sym(t, 0.5, 100.0)),
        ("log1m_probit (1e5)", lambda k: k.log1m_probit(big)),
        ("terms_loglik (study 1)", lambda k: k.terms_loglik(log1mp, *terms)),
        ("latent_loglik (study 1)", lambda k: k.latent_loglik(f, *terms)),
    ]


class _Impl:
    def __init__(self, prefix):
        self.prefix = prefix

    def __getattr__(self, name):
        return getattr(kernels, f"{self.prefix}_{name}")


def run_fit(backend, warmup, draws):
    env = dict(os.environ, POOLPREV_DISABLE_NUMBA="1" if backend == "numpy" else "0")
    code = FIT_SNIPPET.format(warmup=warmup, draws=draws)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    name, secs = out.stdout.split()
    return name, float(secs)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--skip-fit", action="store_true")
    ap.add_argument("--warmup", type=int, default=500)
    ap.add_argument("--draws", type=int, default=500)
    args = ap.parse_args(argv)

    if not kernels.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    impls = {"numpy": _Impl("np"), "numba": _Impl("nb")}
    print(f"{'kernel':<26}{'numpy (us)':>12}{'numba (us)':>12}{'speedup':>9}")
    for name, call in kernel_cases():
        a = _time(lambda: call(impls["numpy"]), args.repeat) * 1e6
        b = _time(lambda: call(impls["numba"]), args.repeat) * 1e6
        print(f"{name:<26}{a:>12.1f}{b:>12.1f}{a / b:>8.1f}x")

    if not args.skip_fit:
        print(f"\nstudy-1 fit, 1 chain, {args.warmup} warmup + {args.draws} draws")
        res = {b: run_fit(b, args.warmup, args.draws) for b in ("numpy", "numba")}
        for b, (name, secs) in res.items():
            print(f"  {name:<8}{secs:8.2f} s")
        print(f"  speedup {res['numpy'][1] / res['numba'][1]:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
