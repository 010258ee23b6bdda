"""Compare the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because VNNGP_DISABLE_NUMBA is read
at import time. Usage:

    python3 benchmarks/bench_accel.py [--n 4000] [--k 16] [--batch 256] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from vnngp import _accel
from vnngp.kernel import KernelParams
from vnngp.likelihood import LikelihoodParams
from vnngp.model import VNNGP
from vnngp.neighbors import Ordering, build_data_nn, build_inducing_nn
from vnngp import terms

n, K, batch, reps = (int(v) for v in sys.argv[1:5])
rng = np.random.default_rng(0)
X = rng.uniform(0, 1, (n, 2))
y = np.sin(6 * X[:, 0]) + 0.1 * rng.standard_normal(n)
kp = KernelParams.from_constrained("matern52", [0.1, 0.1], 1.0)
lik = LikelihoodParams.gaussian(0.05)


def best(fn, reps):
    fn()  # warm-up: includes JIT compilation on the numba path
    times = []
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


order = Ordering.random(n, 0)
Zo = order.apply(X)
out = {"numba": _accel.USE_NUMBA}
out["inducing_knn_s"] = best(lambda: build_inducing_nn(X, order, K), max(1, reps // 10))
out["data_knn_s"] = best(lambda: build_data_nn(X, Zo, K), max(1, reps // 10))

model = VNNGP(kp, lik, X, K, order)
model.attach_data(X)
rows = np.sort(rng.choice(n, batch, replace=False))
nn = model.index.inducing_nn
nbr, cnt = nn.idx[rows], nn.cnt[rows]
cache = terms.conditional(kp, Zo, Zo[rows], nbr, cnt)
gb = rng.standard_normal(cache.b.shape)
gf = rng.standard_normal(batch)
out["conditional_fwd_s"] = best(lambda: terms.conditional(kp, Zo, Zo[rows], nbr, cnt), reps)
out["conditional_vjp_s"] = best(
    lambda: terms.conditional_vjp(kp, Zo, Zo[rows], nbr, cnt, cache, gb, gf), reps)
out["objective_step_s"] = best(lambda: model.objective(X, y, rows, rows), reps)
elbo = model.objective(X, y, rows, rows)[0].total
out["objective_value"] = elbo
print(json.dumps(out))
"""


def run(backend_disabled: bool, args) -> dict:
    env = dict(os.environ)
    env["VNNGP_DISABLE_NUMBA"] = "1" if backend_disabled else "0"
    res = subprocess.run([sys.executable, "-c", CHILD, str(args.n), str(args.k),
                          str(args.batch), str(args.reps)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--json", help="write both result dicts here")
    args = ap.parse_args(argv)
    fast = run(False, args)
    slow = run(True, args)
    keys = [k for k in fast if k.endswith("_s")]
    print(f"N={args.n} K={args.k} batch={args.batch} (best of {args.reps})")
    print(f"{'stage':<22}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for k in keys:
        print(f"{k[:-2]:<22}{1e3 * fast[k]:>12.3f}{1e3 * slow[k]:>12.3f}{slow[k] / fast[k]:>10.1f}")
    rel = abs(fast["objective_value"] - slow["objective_value"]) / abs(slow["objective_value"])
    print(f"objective agreement: relative difference {rel:.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": fast, "numpy": slow, "args": vars(args)}, fh, indent=2)


if __name__ == "__main__":
    main()
