"""Path-kernel timings: numba against the numpy fallback.

    python benchmarks/bench_kernels.py [--paths 2000] [--dt 0.05] [--repeat 3]

Each backend runs once untimed (JIT compile, caches) and then ``--repeat``
times; the best wall time is reported. Both backends see the same random
inputs, so the last column is their largest disagreement.
"""

import argparse
import time

import numpy as np

from catmmv import simulate as sim
from catmmv.coefficients import build_curves
from catmmv.diffusion import diffusion_coefficients
from catmmv.model import reference_params


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--dt", type=float, default=0.05)
    ap.add_argument("--horizon", type=float, default=10.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    jump = reference_params(**{"horizon.T": args.horizon})
    diff = reference_params(**{"horizon.T": args.horizon, "claims.catastrophe.rate": 3.0})
    cases = [("jump", jump, build_curves(jump)), ("diffusion", diff, diffusion_coefficients(diff))]

    steps = int(round(args.horizon / args.dt))
    print(f"{args.paths} paths x {steps} steps, best of {args.repeat}")
    print(f"{'engine':<10s} {'numba s':>9s} {'numpy s':>9s} {'speed-up':>9s} {'max |diff|':>11s}")
    for engine, p, coef in cases:
        res = {}
        for backend in ("numba", "numpy"):
            cfg = sim.SimConfig(n_paths=args.paths, dt=args.dt, seed=1, engine=engine, backend=backend)
            run = lambda: sim.run_ensemble(p, coef, sim.Strategy("feedback"), sim.Adversary.optimal(), cfg)  # noqa: E731
            res[backend] = best_time(run, args.repeat)
        (t_nb, r_nb), (t_np, r_np) = res["numba"], res["numpy"]
        gap = float(np.max(np.abs(r_nb.rec - r_np.rec)))
        print(f"{engine:<10s} {t_nb:9.3f} {t_np:9.3f} {t_np / t_nb:8.1f}x {gap:11.2e}")


if __name__ == "__main__":
    main()
