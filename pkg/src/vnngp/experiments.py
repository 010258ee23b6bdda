"""Experiment runners. Each is a pure function of its config (seed included)
and writes plot data as CSV files whose first line is a '#' column note."""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import terms
from .baselines import (SVGP, SWSGP, exact_gp_posterior, fit_exact_gp,
                        svgp_kl_exact)
from .data import fig4_inputs, load_csv, sample_gp, split
from .errors import ArgumentError, UnsupportedError
from .kernel import KernelParams, cross_matrix
from .likelihood import LikelihoodParams, accuracy, predictive_nll, rmse
from .model import VNNGP, VariationalState
from .neighbors import Ordering, build_data_nn
from .state import save_model
from .training import TrainConfig, train, write_trace_csv

HYPER_INIT = 0.6931


def _g(v) -> str:
    return format(float(v), ".17g")


def write_csv(path, comment: str, columns, rows) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {comment}\n")
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(v if isinstance(v, str) else
                              (str(v) if isinstance(v, (int, np.integer)) else _g(v)) for v in r) + "\n")


def _merge(defaults: dict, cfg: dict) -> dict:
    out = dict(defaults)
    out.update({k: v for k, v in (cfg or {}).items() if v is not None})
    return out


def _out_dir(cfg):
    d = cfg.get("out")
    if d:
        os.makedirs(d, exist_ok=True)
    return d


# -- precision factor ---------------------------------------------------------------

def dense_precision_factor(Kzz) -> np.ndarray:
    """Lower-triangular L with inv(Kzz) = L^T L, via a reversed Cholesky."""
    P = np.linalg.inv(Kzz)
    P = 0.5 * (P + P.T)
    R = np.linalg.cholesky(P[::-1, ::-1])
    return R.T[::-1, ::-1]


def run_fig_precision(cfg: dict = None) -> dict:
    cfg = _merge({"M": 20, "spacing": 1.0, "lengthscale": 1.0, "outputscale": 1.0,
                  "Ks": [1, 2, 10, 19]}, cfg)
    M = int(cfg["M"])
    Z = (np.arange(M) * cfg["spacing"])[:, None]
    kp = KernelParams.from_constrained("se", [cfg["lengthscale"]], cfg["outputscale"])
    Kzz = cross_matrix(kp, Z, Z)
    P = np.linalg.inv(Kzz)
    exact = dense_precision_factor(Kzz)
    rows = [("exact", i, j, exact[i, j]) for i in range(M) for j in range(i + 1)
            if exact[i, j] != 0.0]
    summary = {}
    for K in cfg["Ks"]:
        model = VNNGP(kp, LikelihoodParams.gaussian(1.0), Z, int(K), Ordering.identity(M))
        L = model.precision_factor().toarray()
        nnz = (L != 0).sum(axis=1)
        err = float(np.linalg.norm(L.T @ L - P) / np.linalg.norm(P))
        summary[str(K)] = {"max_row_nonzeros": int(nnz.max()), "row_nonzeros": nnz.tolist(),
                           "frobenius_rel_error": err}
        rows += [(str(K), i, j, L[i, j]) for i in range(M) for j in range(M) if L[i, j] != 0.0]
    out = _out_dir(cfg)
    if out:
        write_csv(os.path.join(out, "fig_precision.csv"),
                  "nonzero entries of the precision Cholesky factor L (inv(Kzz) ~ L^T L) per K; "
                  "K='exact' is the dense factor",
                  ["K", "row", "col", "value"], rows)
        with open(os.path.join(out, "fig_precision_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    return summary


# -- KL versus K --------------------------------------------------------------------

def fig_kl_state(cfg: dict):
    """Grid inputs and q(u) with means drawn from a GP, variances fixed."""
    M = int(cfg["M"])
    Z = (np.arange(M) * cfg["spacing"])[:, None]
    kp_mean = KernelParams.from_constrained("se", [cfg["mean_lengthscale"]], cfg["outputscale"])
    m = sample_gp(kp_mean, 0.0, Z, cfg["seed"])
    return Z, VariationalState.from_moments(m, np.full(M, float(cfg["s"])))


def run_fig_kl(cfg: dict = None) -> list:
    cfg = _merge({"M": 20, "spacing": 1.0, "outputscale": 1.0, "mean_lengthscale": 5.0,
                  "s": 1.0, "lengthscales": [1.0, 5.0, 25.0], "seed": 0}, cfg)
    Z, vs = fig_kl_state(cfg)
    M = Z.shape[0]
    rows = []
    for ls in cfg["lengthscales"]:
        kp = KernelParams.from_constrained("se", [ls], cfg["outputscale"])
        exact = svgp_kl_exact(kp, Z, vs)
        for K in range(1, M + 1):
            model = VNNGP(kp, LikelihoodParams.gaussian(1.0), Z, K, Ordering.identity(M), vs)
            nn = build_data_nn(Z, model.Zo, K)
            safe = np.where(nn.idx >= 0, nn.idx, 0)
            kls = terms.subset_kl(kp, model.Zo, nn.idx, nn.cnt, vs.m[safe], vs.s[safe],
                                  need_grad=False)[0]
            rows.append((ls, K, model.kl(), float(np.mean(kls)), exact))
    out = _out_dir(cfg)
    if out:
        write_csv(os.path.join(out, "fig_kl.csv"),
                  "KL(q||p) versus neighbor budget K: VNNGP total, SWSGP mean local KL, dense exact",
                  ["lengthscale", "K", "kl_vnngp", "kl_swsgp_subset", "kl_exact"], rows)
    return rows


SOLVERS = ("closed_form", "adam")


def fit_variational(model, X, y, solver: str, tc: TrainConfig):
    """Optimize q(u) only. ``closed_form`` jumps to the exact Gaussian optimum
    (full-rank SVGP included); ``adam`` runs the stochastic trainer."""
    if solver == "closed_form":
        return model.fit_gaussian_optimum(X, y)
    if solver == "adam":
        return train(model, X, y, tc).model
    raise ArgumentError(f"unknown solver {solver!r}; expected one of {SOLVERS}")


# -- overfitting simulation ------------------------------------------------------------

def overfit_data(cfg: dict):
    X = fig4_inputs(cfg["seed"])
    kp = KernelParams.from_constrained("se", [cfg["lengthscale"]], cfg["outputscale"])
    y = sample_gp(kp, cfg["noise"], X, cfg["seed"] + 1)
    return kp, X, y


def run_overfit_sim(cfg: dict = None) -> dict:
    cfg = _merge({"lengthscale": 5.0, "outputscale": 5.0, "noise": 5.0, "K": 5, "seed": 0,
                  "solver": "closed_form", "iterations": 20000, "lr": 0.003,
                  "grid": [-10.0, 60.0, 281]}, cfg)
    kp, X, y = overfit_data(cfg)
    lik = LikelihoodParams.gaussian(cfg["noise"])
    N = X.shape[0]
    lo, hi, n = cfg["grid"]
    G = np.linspace(lo, hi, int(n))[:, None]
    tc = TrainConfig(iterations=int(cfg["iterations"]), lr=cfg["lr"], batch_data=N, batch_ip=N,
                     seed=cfg["seed"], train_hypers=False)
    curves = {"exact": exact_gp_posterior(kp, lik, X, y).predict_f(G)}
    models = {"svgp": SVGP(kp, lik, X, fullrank=True),
              "vnngp": VNNGP(kp, lik, X, cfg["K"], seed=cfg["seed"]),
              "swsgp": SWSGP(kp, lik, X, cfg["K"], seed=cfg["seed"])}
    for name, mdl in models.items():
        fit_variational(mdl, X, y, cfg["solver"], tc)
        curves[name] = mdl.predict_f(G)
    ref = curves["exact"][0]
    summary = {name: {"grid_rmse_vs_exact": rmse(c[0], ref)} for name, c in curves.items()}
    out = _out_dir(cfg)
    if out:
        cols = ["x"]
        for name in curves:
            cols += [f"{name}_mean", f"{name}_lower", f"{name}_upper"]
        rows = []
        for i, x in enumerate(G[:, 0]):
            r = [x]
            for mean, var in curves.values():
                sd = math.sqrt(var[i])
                r += [mean[i], mean[i] - 2 * sd, mean[i] + 2 * sd]
            rows.append(r)
        write_csv(os.path.join(out, "overfit_curves.csv"),
                  "posterior mean and mean +- 2 sd of f on a grid per model", cols, rows)
        write_csv(os.path.join(out, "overfit_data.csv"), "observations", ["x", "y"],
                  list(zip(X[:, 0], y)))
        with open(os.path.join(out, "overfit_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    return summary


# -- noise sweep ---------------------------------------------------------------------

def noise_sweep_data(cfg: dict):
    rng = np.random.default_rng(cfg["seed"])
    n_tr, n_te = int(cfg["n_train"]), int(cfg["n_test"])
    X = rng.uniform(0.0, 1.0, size=(n_tr + n_te, 2))
    kp = KernelParams.from_constrained("matern52", [cfg["lengthscale"]] * 2, cfg["outputscale"])
    y = sample_gp(kp, cfg["noise"], X, cfg["seed"] + 1)
    return kp, X[:n_tr], y[:n_tr], X[n_tr:], y[n_tr:]


def _scale01(v):
    v = np.asarray(v, dtype=float)
    span = v.max() - v.min()
    return (v - v.min()) / span if span > 0 else np.zeros_like(v)


def run_noise_sweep(cfg: dict = None) -> dict:
    cfg = _merge({"n_train": 2000, "n_test": 500, "lengthscale": 0.05, "outputscale": 1.0,
                  "noise": 0.1, "grid": [1e-3, 1.0, 10], "K": 16, "svgp_M": 200, "epochs": 300,
                  "batch": 256, "lr": 0.05, "seed": 0, "fit_hypers": True, "solver": "closed_form",
                  "methods": ["vnngp", "svgp", "swsgp"]}, cfg)
    kp_true, X, y, Xt, yt = noise_sweep_data(cfg)
    N = y.size
    if cfg["fit_hypers"]:
        kp, lik0 = fit_exact_gp(
            KernelParams.from_constrained("matern52", [HYPER_INIT] * 2, HYPER_INIT),
            LikelihoodParams.gaussian(HYPER_INIT), X, y)
        exact_noise = lik0.noise
    else:
        kp, exact_noise = kp_true, cfg["noise"]
    lo, hi, n = cfg["grid"]
    noises = np.geomspace(lo, hi, int(n))
    iters = int(math.ceil(N / cfg["batch"])) * int(cfg["epochs"])
    rng = np.random.default_rng(cfg["seed"] + 2)
    Zs = X[np.sort(rng.choice(N, min(int(cfg["svgp_M"]), N), replace=False))]
    res = {m: {"neg_elbo": [], "test_nll": []} for m in cfg["methods"]}
    for s2 in noises:
        lik = LikelihoodParams.gaussian(float(s2))
        tc = TrainConfig(iterations=iters, lr=cfg["lr"], batch_data=cfg["batch"],
                         batch_ip=cfg["batch"], seed=cfg["seed"], train_hypers=False)
        for method in cfg["methods"]:
            if method == "vnngp":
                mdl = VNNGP(kp, lik, X, cfg["K"], seed=cfg["seed"])
            elif method == "swsgp":
                mdl = SWSGP(kp, lik, X, cfg["K"], seed=cfg["seed"])
            else:
                mdl = SVGP(kp, lik, Zs)
            fit_variational(mdl, X, y, cfg["solver"], tc)
            res[method]["neg_elbo"].append(-mdl.elbo(X, y).total)
            res[method]["test_nll"].append(float(np.mean(predictive_nll(lik, mdl.predict_f(Xt), yt))))
    summary = {"noises": noises.tolist(), "exact_gp_noise": exact_noise,
               "kernel": kp.to_dict(), "iterations": iters}
    for method, r in res.items():
        summary[method] = dict(r, argmin_noise=float(noises[int(np.argmin(r["neg_elbo"]))]))
    out = _out_dir(cfg)
    if out:
        cols, cols_raw = ["noise"], ["noise"]
        for method in res:
            cols += [f"{method}_neg_elbo_scaled", f"{method}_test_nll_scaled"]
            cols_raw += [f"{method}_neg_elbo", f"{method}_test_nll"]
        scaled = {m: (_scale01(r["neg_elbo"]), _scale01(r["test_nll"])) for m, r in res.items()}
        rows = [[s2] + [v for m in res for v in (scaled[m][0][i], scaled[m][1][i])]
                for i, s2 in enumerate(noises)]
        write_csv(os.path.join(out, "noise_sweep.csv"),
                  "negative training ELBO and test NLL per fixed noise, each curve scaled to [0,1]",
                  cols, rows)
        rows = [[s2] + [v for m in res for v in (res[m]["neg_elbo"][i], res[m]["test_nll"][i])]
                for i, s2 in enumerate(noises)]
        write_csv(os.path.join(out, "noise_sweep_raw.csv"),
                  "negative training ELBO and test NLL per fixed noise (unscaled)", cols_raw, rows)
        with open(os.path.join(out, "noise_sweep_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    return summary


# -- benchmark pipeline -----------------------------------------------------------------

@dataclass
class RunReport:
    config: dict
    metrics: dict
    hyperparameters: dict
    wall_clock: float
    seed: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


BENCH_DEFAULTS = {"method": "vnngp", "K": 32, "likelihood": "gaussian", "kernel": "matern52",
                  "num_inducing": 1024, "fullrank": False, "seed": 0, "target": "y",
                  "train": {}}


def build_model(method, kp, lik, X, cfg, seed):
    if method == "vnngp":
        return VNNGP(kp, lik, X, int(cfg["K"]), seed=seed)
    if method == "swsgp":
        return SWSGP(kp, lik, X, int(cfg["K"]), seed=seed)
    if method == "svgp":
        N = X.shape[0]
        M = min(int(cfg["num_inducing"]), N)
        Z = X if M == N else X[np.sort(np.random.default_rng(seed).choice(N, M, replace=False))]
        return SVGP(kp, lik, Z, fullrank=bool(cfg["fullrank"]))
    raise ArgumentError(f"unknown method {method!r}")


def evaluate(model, lik, X, y, standardizer=None) -> dict:
    """Test metrics on the original target scale."""
    mean, var = model.predict_f(X)
    out = {}
    if lik.kind == "bernoulli":
        out["accuracy"] = accuracy((mean, var), y)
        out["nll"] = float(np.mean(predictive_nll(lik, (mean, var), y)))
        return out
    scale = standardizer.y_std if standardizer is not None else 1.0
    y_orig = standardizer.inverse_y(y) if standardizer is not None else y
    out["nll"] = float(np.mean(predictive_nll(lik, (mean, var), y))) + math.log(scale)
    pm = standardizer.inverse_y(mean) if standardizer is not None else mean
    out["rmse"] = rmse(pm, y_orig)
    return out


def hyperparameters(model) -> dict:
    kp = model.kernel
    lik = LikelihoodParams.gaussian(model.noise) if not hasattr(model, "likelihood") else model.likelihood
    return {"lengthscales": kp.lengthscales.tolist(), "outputscale": kp.outputscale,
            "likelihood": lik.to_dict()}


def run_benchmark(cfg: dict) -> RunReport:
    cfg = _merge(BENCH_DEFAULTS, cfg)
    if "data" not in cfg:
        raise ArgumentError("benchmark needs a dataset path ('data')")
    seed = int(cfg["seed"])
    task = "classification" if cfg["likelihood"] == "bernoulli" else "regression"
    t0 = time.perf_counter()
    ds = load_csv(cfg["data"], cfg["target"], task)
    tr, va, te = split(ds, seed)
    D = tr.X.shape[1]
    kp = KernelParams.from_constrained(cfg["kernel"], [HYPER_INIT] * D, HYPER_INIT)
    lik = LikelihoodParams.make(cfg["likelihood"], HYPER_INIT)
    method = cfg["method"]
    extra = {"n_train": len(tr), "n_val": len(va), "n_test": len(te), "dropped_rows": ds.dropped}
    if method == "exact":
        if lik.kind != "gaussian":
            raise UnsupportedError("exact GP needs a Gaussian likelihood")
        from .baselines import EXACT_MAX_N
        if len(tr) > EXACT_MAX_N:
            raise UnsupportedError(f"exact GP limited to N <= {EXACT_MAX_N}, got {len(tr)}")
        kp, lik = fit_exact_gp(kp, lik, tr.X, tr.y, maxiter=int(cfg["train"].get("iterations", 200)))
        model = exact_gp_posterior(kp, lik, tr.X, tr.y)
        hyp = {"lengthscales": kp.lengthscales.tolist(), "outputscale": kp.outputscale,
               "likelihood": lik.to_dict()}
    else:
        tcfg = TrainConfig.from_dict(dict({"seed": seed}, **cfg["train"]))
        model = build_model(method, kp, lik, tr.X, cfg, seed)
        result = train(model, tr.X, tr.y, tcfg)
        lik = model.likelihood
        hyp = hyperparameters(model)
        extra["final_smoothed_loss"] = result.final_loss
        out = _out_dir(cfg)
        if out:
            write_trace_csv(os.path.join(out, "trace.csv"), result.trace)
    metrics = {"test": evaluate(model, lik, te.X, te.y, te.standardizer),
               "val": evaluate(model, lik, va.X, va.y, va.standardizer)}
    wall = time.perf_counter() - t0
    report = RunReport({k: v for k, v in cfg.items() if k != "out"}, metrics, hyp, wall, seed, extra)
    out = _out_dir(cfg)
    if out:
        save_model(os.path.join(out, "model.json"), model, tr.standardizer)
        with open(os.path.join(out, "report.json"), "w") as fh:
            fh.write(report.to_json())
    return report
