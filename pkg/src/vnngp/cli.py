"""Command-line entry point (``vnngp <command>``).

Exit codes: 0 success, 2 argument error, 3 ingestion error, 4 numerical error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import experiments as ex
from .data import Standardizer, load_csv
from .errors import ArgumentError, IngestionError, NumericalError, UnsupportedError
from .kernel import KernelParams
from .likelihood import LikelihoodParams, predictive_moments
from .state import load_model, save_model
from .training import TrainConfig, train, write_trace_csv

EXIT_OK, EXIT_ARGS, EXIT_INGEST, EXIT_NUMERIC = 0, 2, 3, 4
TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)
METHODS = ("exact", "svgp", "vnngp", "swsgp")
LIKELIHOODS = ("gaussian", "bernoulli", "studentt")


def _load_config(path):
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise IngestionError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ArgumentError("config must be a JSON object")
    return cfg


def _config(args, nest_train: bool = True) -> dict:
    """File values, then command-line overrides; flat training keys are nested
    under ``train`` for the model commands."""
    cfg = _load_config(args.config)
    for key in ("seed", "out", "method", "likelihood", "target", "data"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "k", None) is not None:
        cfg["K"] = args.k
    if not nest_train:
        return cfg
    tr = dict(cfg.get("train", {}))
    for key in list(cfg):
        if key in TRAIN_KEYS and key != "seed":
            tr[key] = cfg.pop(key)
    cfg["train"] = tr
    return cfg


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def _need_out(cfg):
    out = cfg.get("out")
    if not out:
        raise ArgumentError("--out is required")
    os.makedirs(out, exist_ok=True)
    return out


# -- commands ------------------------------------------------------------------------

def cmd_train(args):
    """Fit on every row of the dataset and persist the model."""
    cfg = ex._merge(ex.BENCH_DEFAULTS, _config(args))
    out = _need_out(cfg)
    task = "classification" if cfg["likelihood"] == "bernoulli" else "regression"
    ds = load_csv(cfg["data"], cfg["target"], task)
    st = Standardizer.fit(ds.X, ds.y, scale_y=task == "regression")
    X = st.transform_x(ds.X)
    y = st.transform_y(ds.y) if task == "regression" else ds.y
    D = X.shape[1]
    kp = KernelParams.from_constrained(cfg["kernel"], [ex.HYPER_INIT] * D, ex.HYPER_INIT)
    lik = LikelihoodParams.make(cfg["likelihood"], ex.HYPER_INIT)
    seed = int(cfg["seed"])
    if cfg["method"] == "exact":
        from .baselines import exact_gp_posterior, fit_exact_gp
        kp, lik = fit_exact_gp(kp, lik, X, y)
        model = exact_gp_posterior(kp, lik, X, y)
        hyp = {"lengthscales": kp.lengthscales.tolist(), "outputscale": kp.outputscale,
               "likelihood": lik.to_dict()}
    else:
        model = ex.build_model(cfg["method"], kp, lik, X, cfg, seed)
        result = train(model, X, y, TrainConfig.from_dict(dict({"seed": seed}, **cfg["train"])))
        write_trace_csv(os.path.join(out, "trace.csv"), result.trace)
        hyp = ex.hyperparameters(model)
    save_model(os.path.join(out, "model.json"), model, st)
    _write_json(os.path.join(out, "train_report.json"),
                {"config": {k: v for k, v in cfg.items() if k != "out"}, "hyperparameters": hyp,
                 "n": len(ds), "dropped_rows": ds.dropped})
    return EXIT_OK


def _predict(model, st, X):
    Xs = st.transform_x(X) if st is not None else X
    mean, var = model.predict_f(Xs)
    lik = getattr(model, "likelihood", None) or LikelihoodParams.gaussian(model.noise)
    return lik, mean, var


def _dataset_for(args, model_lik):
    task = "classification" if model_lik.kind == "bernoulli" else "regression"
    return load_csv(args.data, args.target, task)


def cmd_predict(args):
    model, st = load_model(args.model)
    out = _need_out({"out": args.out})
    ds = load_csv(args.data, args.target, "regression", require_target=False)
    lik, mean, var = _predict(model, st, ds.X)
    ym, yv = predictive_moments(lik, (mean, var))
    if lik.kind != "bernoulli" and st is not None:
        ym, yv = st.inverse_moments(ym, yv)
        mean, var = st.inverse_moments(mean, var)
    ex.write_csv(os.path.join(out, "predictions.csv"),
                 "predictive moments on the original target scale (f: latent, y: observation)",
                 ["row", "f_mean", "f_var", "y_mean", "y_var"],
                 [(i, mean[i], var[i], ym[i], yv[i]) for i in range(mean.size)])
    return EXIT_OK


def cmd_eval(args):
    model, st = load_model(args.model)
    lik = getattr(model, "likelihood", None) or LikelihoodParams.gaussian(model.noise)
    ds = _dataset_for(args, lik)
    X = st.transform_x(ds.X) if st is not None else ds.X
    y = ds.y
    if lik.kind != "bernoulli" and st is not None:
        y = st.transform_y(y)
    metrics = ex.evaluate(model, lik, X, y, st if lik.kind != "bernoulli" else None)
    metrics["n"] = len(ds)
    metrics["dropped_rows"] = ds.dropped
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.json"), "w") as fh:
            fh.write(text)
    print(text)
    return EXIT_OK


def cmd_experiment(runner):
    def run(args):
        cfg = _config(args, nest_train=False)
        _need_out(cfg)
        result = runner(cfg)
        if isinstance(result, dict):
            print(json.dumps(result, indent=2, sort_keys=True, default=float))
        return EXIT_OK
    return run


def cmd_bench(args):
    cfg = _config(args)
    _need_out(cfg)
    if "data" not in cfg:
        raise ArgumentError("bench needs --data")
    report = ex.run_benchmark(cfg)
    print(report.to_json())
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

def _common(p, seed_required=False):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, required=seed_required)
    p.add_argument("--out", help="output directory")


def _model_flags(p):
    p.add_argument("--data", help="CSV dataset with a header row")
    p.add_argument("--target", help="name of the target column")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--k", type=int, help="neighbor budget K")
    p.add_argument("--likelihood", choices=LIKELIHOODS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vnngp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model on a CSV dataset")
    _common(p)
    _model_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("predict", cmd_predict, "predict with a saved model"),
                                 ("eval", cmd_eval, "metrics of a saved model on a dataset")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model", required=True, help="model-state JSON file")
        p.add_argument("--data", required=True)
        p.add_argument("--target", default="y")
        p.add_argument("--out")
        p.set_defaults(func=func)

    for name, runner, helptext in (
            ("fig-precision", ex.run_fig_precision, "sparse precision factor versus K"),
            ("fig-kl", ex.run_fig_kl, "KL divergence versus K"),
            ("sim-overfit", ex.run_overfit_sim, "two-cluster posterior comparison"),
            ("noise-sweep", ex.run_noise_sweep, "ELBO and test NLL versus fixed noise")):
        p = sub.add_parser(name, help=helptext)
        _common(p, seed_required=True)
        if name in ("sim-overfit", "noise-sweep"):
            p.add_argument("--k", type=int)
        p.set_defaults(func=cmd_experiment(runner))

    p = sub.add_parser("bench", help="load, split, train and evaluate; writes a run report")
    _common(p, seed_required=True)
    _model_flags(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "k", None) is not None and args.k < 0:
        ap.error("--k must be nonnegative")
    try:
        return args.func(args)
    except (ArgumentError, UnsupportedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
