import csv

import numpy as np
import pytest

from vnngp.baselines import SVGP
from vnngp.errors import UnsupportedError
from vnngp.experiments import (dense_precision_factor, run_benchmark, run_fig_kl, run_fig_precision,
                               run_noise_sweep)
from vnngp.kernel import KernelParams, cross_matrix
from vnngp.likelihood import LikelihoodParams
from vnngp.model import VNNGP


def test_dense_precision_factor(rng):
    A = rng.normal(size=(5, 5))
    K = A @ A.T + 5 * np.eye(5)
    L = dense_precision_factor(K)
    assert np.allclose(L, np.tril(L))
    np.testing.assert_allclose(L.T @ L, np.linalg.inv(K), rtol=1e-10, atol=1e-12)


def test_fig_precision(tmp_path):
    s = run_fig_precision({"out": str(tmp_path)})
    for K in (1, 2, 10, 19):
        assert s[str(K)]["max_row_nonzeros"] <= K + 1
    assert s["19"]["row_nonzeros"] == list(range(1, 21))
    assert s["10"]["frobenius_rel_error"] < s["1"]["frobenius_rel_error"]
    lines = (tmp_path / "fig_precision.csv").read_text().splitlines()
    assert lines[0].startswith("#") and lines[1] == "K,row,col,value"


def test_fig_kl_ordering_and_rerun(tmp_path):
    rows = run_fig_kl({"out": str(tmp_path), "lengthscales": [1.0]})
    for ls, K, kv, ksw, kex in rows:
        assert ksw <= kex + 1e-10
        if K < 20:
            assert abs(kv - kex) <= abs(ksw - kex) + 1e-10
    last = rows[-2]
    assert last[1] == 19 and last[2] == pytest.approx(last[4], abs=1e-8)
    first = (tmp_path / "fig_kl.csv").read_bytes()
    run_fig_kl({"out": str(tmp_path), "lengthscales": [1.0]})
    assert (tmp_path / "fig_kl.csv").read_bytes() == first


def make_csv(path, n, rng, D=2):
    X = rng.uniform(0, 3, (n, D))
    y = np.sin(X.sum(axis=1)) + 0.1 * rng.normal(size=n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{d}" for d in range(D)] + ["y"])
        for row, t in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])
    return path


def test_benchmark_exact_cap(tmp_path, monkeypatch, rng):
    import vnngp.baselines as bl
    monkeypatch.setattr(bl, "EXACT_MAX_N", 10)
    p = make_csv(tmp_path / "d.csv", 30, rng)
    with pytest.raises(UnsupportedError):
        run_benchmark({"data": str(p), "method": "exact"})


def test_benchmark_deterministic(tmp_path, rng):
    p = make_csv(tmp_path / "d.csv", 60, rng)
    cfg = {"data": str(p), "method": "vnngp", "K": 4, "train": {"iterations": 30, "batch_data": 16,
                                                                   "batch_ip": 16}}
    a = run_benchmark(dict(cfg, out=str(tmp_path / "a")))
    b = run_benchmark(dict(cfg, out=str(tmp_path / "b")))
    assert a.metrics == b.metrics and a.hyperparameters == b.hyperparameters
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert a.extra["n_train"] == 39 and a.extra["n_test"] == 12


def test_vnngp_saturated_matches_svgp(rng):
    X = rng.uniform(0, 3, (15, 1))
    y = np.sin(2 * X[:, 0]) + 0.1 * rng.normal(size=15)
    kp = KernelParams.from_constrained("matern52", [0.6931], 0.6931)
    lik = LikelihoodParams.gaussian(0.05)
    Z = X[:8]
    v = VNNGP(kp, lik, Z, 8, seed=3).fit_gaussian_optimum(X, y)
    s = SVGP(kp, lik, Z).fit_gaussian_optimum(X, y)
    Xs = rng.uniform(0, 3, (6, 1))
    for a, b in zip(v.predict_f(Xs), s.predict_f(Xs)):
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-8)
    assert v.elbo(X, y).total == pytest.approx(s.elbo(X, y).total, rel=1e-6)


def test_noise_sweep_small(tmp_path):
    s = run_noise_sweep({"out": str(tmp_path), "n_train": 120, "n_test": 40, "lengthscale": 0.3,
                         "grid": [1e-2, 1.0, 5], "K": 8, "svgp_M": 30})
    for m in ("vnngp", "svgp", "swsgp"):
        assert len(s[m]["neg_elbo"]) == 5
        assert s[m]["argmin_noise"] in s["noises"]
    with open(tmp_path / "noise_sweep.csv") as fh:
        assert fh.readline().startswith("#")
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if k.endswith("_scaled"):
                assert 0.0 <= float(v) <= 1.0
