"""Versioned JSON model-state files.

Floats are written as decimal strings with 17 significant digits so that
every value round-trips bit-exactly.
"""
from __future__ import annotations

import json

import numpy as np

from .baselines import SVGP, SWSGP, ExactPosterior, exact_gp_posterior
from .data import Standardizer
from .errors import IngestionError
from .kernel import KernelParams
from .likelihood import LikelihoodParams
from .model import VNNGP, VariationalState
from .neighbors import NeighborSets, Ordering

FORMAT = "vnngp-model-state"
SCHEMA_VERSION = 1


def _enc(a) -> list:
    return [format(float(v), ".17g") for v in np.ravel(a)]


def _dec(v, shape=None) -> np.ndarray:
    a = np.array([float(x) for x in v], dtype=float)
    return a.reshape(shape) if shape is not None else a


def _flat_sets(s: NeighborSets) -> dict:
    flat, off = s.flat()
    return {"flat": flat.tolist(), "offsets": off.tolist()}


def model_to_dict(model, standardizer: Standardizer = None) -> dict:
    d = {"format": FORMAT, "schema_version": SCHEMA_VERSION}
    if isinstance(model, ExactPosterior):
        d.update(method="exact", kernel=model.kernel.to_dict(),
                 likelihood=LikelihoodParams.gaussian(model.noise).to_dict(),
                 X=_enc(model.X), X_shape=list(model.X.shape), alpha=_enc(model.alpha))
    else:
        Z = model.inducing_inputs()
        st = model.state
        d.update(method=model.method, kernel=model.kernel.to_dict(),
                 likelihood=model.likelihood.to_dict(), K=model.K,
                 Z=_enc(Z), Z_shape=list(Z.shape), ordering=model.ordering.to_dict(),
                 inducing_nn=_flat_sets(model.index.inducing_nn),
                 m=_enc(st.m), s=_enc(st.s), raw_s=_enc(st.raw_s))
        if st.fullrank:
            d["raw_chol"] = _enc(st.raw_chol)
    if standardizer is not None:
        d["standardizer"] = standardizer.to_dict()
    return d


def model_from_dict(d: dict, y_train=None):
    """Rebuild a model. Exact-GP states re-solve from X and ``alpha``-implied y."""
    if d.get("format") != FORMAT:
        raise IngestionError(f"not a model-state file (format {d.get('format')!r})")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise IngestionError(f"unsupported schema version {d.get('schema_version')!r}")
    try:
        kp = KernelParams.from_dict(d["kernel"])
        lik = LikelihoodParams.from_dict(d["likelihood"])
        method = d["method"]
        if method == "exact":
            X = _dec(d["X"], d["X_shape"])
            post = exact_gp_posterior(kp, lik, X, np.zeros(X.shape[0]))
            return ExactPosterior(_dec(d["alpha"]), post.chol, X, kp, lik.noise)
        Z = _dec(d["Z"], d["Z_shape"])
        M = Z.shape[0]
        state = VariationalState(_dec(d["m"]), _dec(d["raw_s"]),
                                 _dec(d["raw_chol"], (M, M)) if "raw_chol" in d else None)
        order = Ordering.from_dict(d["ordering"])
        if method == "vnngp":
            model = VNNGP(kp, lik, Z, int(d["K"]), order, state)
        elif method == "swsgp":
            model = SWSGP(kp, lik, Z, int(d["K"]), order, state)
        elif method == "svgp":
            model = SVGP(kp, lik, Z, state=state, K=int(d["K"]))
        else:
            raise IngestionError(f"unknown method {method!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"malformed model state: {exc}") from None
    stored = d["inducing_nn"]
    flat, off = model.index.inducing_nn.flat()
    if flat.tolist() != stored["flat"] or off.tolist() != stored["offsets"]:
        raise IngestionError("stored neighbor index does not match the rebuilt one")
    return model


def save_model(path, model, standardizer: Standardizer = None) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, standardizer), fh)


def load_model(path):
    """Returns ``(model, standardizer or None)``."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read model state {path}: {exc}") from None
    st = Standardizer.from_dict(d["standardizer"]) if "standardizer" in d else None
    return model_from_dict(d), st
