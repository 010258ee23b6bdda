"""Observation models and their expectations under a Gaussian marginal q(f).

Gaussian terms are closed form. Bernoulli (probit) and Student-t use
Gauss-Hermite quadrature with ``order`` nodes over f ~ N(mean, var).

``expected_log_lik_grad`` returns value and gradients with respect to the
marginal mean, the marginal variance and the raw (softplus) likelihood
parameter, all vectorized over a batch of points.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import gammaln, log_ndtr, logsumexp, ndtr

from .errors import ArgumentError
from .transforms import inv_softplus, sigmoid, softplus

LOG2PI = float(np.log(2.0 * np.pi))
DEFAULT_ORDER = 20


class GaussianMarginal(NamedTuple):
    mean: float
    variance: float


@lru_cache(maxsize=16)
def gauss_hermite(order: int):
    """Nodes and weights for E[g(f)], f ~ N(0, 1) as sum(w * g(x))."""
    t, w = np.polynomial.hermite.hermgauss(order)
    return np.sqrt(2.0) * t, w / np.sqrt(np.pi)


@dataclass(frozen=True)
class LikelihoodParams:
    kind: str
    raw_param: Optional[float] = None
    dof: float = 4.0
    order: int = DEFAULT_ORDER

    def __post_init__(self):
        kind = str(self.kind).lower().replace("-", "").replace("_", "")
        kind = {"gaussian": "gaussian", "bernoulli": "bernoulli", "studentt": "studentt"}.get(kind)
        if kind is None:
            raise ArgumentError(f"unknown likelihood {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "bernoulli":
            object.__setattr__(self, "raw_param", None)
        elif self.raw_param is None or not np.isfinite(self.raw_param):
            raise ArgumentError(f"{kind} likelihood needs a finite raw parameter")
        else:
            object.__setattr__(self, "raw_param", float(self.raw_param))
        if self.dof <= 0:
            raise ArgumentError("Student-t dof must be positive")
        if self.order < 1:
            raise ArgumentError("quadrature order must be positive")

    @classmethod
    def gaussian(cls, noise: float, order: int = DEFAULT_ORDER) -> "LikelihoodParams":
        if not noise > 0:
            raise ArgumentError("Gaussian noise variance must be positive")
        return cls("gaussian", float(inv_softplus(noise)), order=order)

    @classmethod
    def bernoulli(cls, order: int = DEFAULT_ORDER) -> "LikelihoodParams":
        return cls("bernoulli", None, order=order)

    @classmethod
    def studentt(cls, scale: float, dof: float = 4.0, order: int = DEFAULT_ORDER):
        if not scale > 0:
            raise ArgumentError("Student-t scale must be positive")
        if not dof > 0:
            raise ArgumentError("Student-t dof must be positive")
        return cls("studentt", float(inv_softplus(scale)), dof=float(dof), order=order)

    @classmethod
    def make(cls, kind: str, value: float = 0.6931, **kw) -> "LikelihoodParams":
        kind = str(kind).lower().replace("-", "").replace("_", "")
        if kind == "gaussian":
            return cls.gaussian(value, **kw)
        if kind == "bernoulli":
            return cls.bernoulli(**kw)
        if kind == "studentt":
            return cls.studentt(value, **kw)
        raise ArgumentError(f"unknown likelihood {kind!r}")

    @property
    def trainable(self) -> bool:
        return self.raw_param is not None

    @property
    def value(self) -> Optional[float]:
        """Noise variance (Gaussian) or scale (Student-t)."""
        return None if self.raw_param is None else float(softplus(self.raw_param))

    @property
    def noise(self) -> Optional[float]:
        return self.value if self.kind == "gaussian" else None

    def with_raw(self, raw) -> "LikelihoodParams":
        return LikelihoodParams(self.kind, raw, self.dof, self.order)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "order": self.order}
        if self.kind == "gaussian":
            d["noise"] = format(self.value, ".17g")
        elif self.kind == "studentt":
            d["scale"] = format(self.value, ".17g")
            d["dof"] = format(self.dof, ".17g")
        return d

    @classmethod
    def from_dict(cls, d) -> "LikelihoodParams":
        order = int(d.get("order", DEFAULT_ORDER))
        if d["kind"] == "gaussian":
            return cls.gaussian(float(d["noise"]), order=order)
        if d["kind"] == "studentt":
            return cls.studentt(float(d["scale"]), float(d["dof"]), order=order)
        return cls.bernoulli(order=order)


# -- pointwise log densities and f-derivatives ---------------------------------

def _probit_terms(y, f):
    z = y * f
    lp = log_ndtr(z)
    # d/df log Phi(y f) = y * phi(z) / Phi(z)
    ratio = np.exp(-0.5 * z * z - 0.5 * LOG2PI - lp)
    return lp, y * ratio


def _studentt_terms(y, f, scale, dof):
    e = y - f
    q = dof * scale * scale + e * e
    lp = (gammaln(0.5 * (dof + 1)) - gammaln(0.5 * dof) - 0.5 * np.log(dof * np.pi)
          - np.log(scale) - 0.5 * (dof + 1) * np.log1p(e * e / (dof * scale * scale)))
    dlp_df = (dof + 1) * e / q
    dlp_dscale = -1.0 / scale + (dof + 1) * e * e / (scale * q)
    return lp, dlp_df, dlp_dscale


def _check_y(lik, y):
    if lik.kind == "bernoulli" and np.any(np.abs(np.abs(y) - 1.0) > 0):
        raise ArgumentError("Bernoulli targets must be -1 or +1")


def expected_log_lik_grad(lik: LikelihoodParams, mean, var, y):
    """E_q[log p(y|f)] with gradients (d/dmean, d/dvar, d/draw_param)."""
    mean = np.asarray(mean, dtype=float)
    var = np.maximum(np.asarray(var, dtype=float), 0.0)
    y = np.asarray(y, dtype=float)
    if lik.kind == "gaussian":
        s2 = lik.value
        r2 = (y - mean) ** 2 + var
        val = -0.5 * (LOG2PI + np.log(s2) + r2 / s2)
        g_mean = (y - mean) / s2
        g_var = np.full(np.shape(val), -0.5 / s2)
        g_s2 = -0.5 / s2 + 0.5 * r2 / s2 ** 2
        return val, g_mean, g_var, g_s2 * float(sigmoid(lik.raw_param))
    _check_y(lik, y)
    x, w = gauss_hermite(lik.order)
    sd = np.sqrt(var)
    f = mean[..., None] + sd[..., None] * x
    if lik.kind == "bernoulli":
        lp, dlp = _probit_terms(y[..., None], f)
        g_raw = np.zeros(np.shape(mean))
    else:
        scale = lik.value
        lp, dlp, dsc = _studentt_terms(y[..., None], f, scale, lik.dof)
        g_raw = (dsc @ w) * float(sigmoid(lik.raw_param))
    val = lp @ w
    g_mean = dlp @ w
    # exact derivative of the quadrature sum with respect to var
    safe = np.where(sd > 0, sd, 1.0)
    g_var = np.where(sd > 0, (dlp * x) @ w / (2.0 * safe), 0.0)
    return val, g_mean, g_var, g_raw


def log_density(lik: LikelihoodParams, y, f):
    """Pointwise log p(y | f), broadcasting y against f."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    if lik.kind == "gaussian":
        return -0.5 * (LOG2PI + np.log(lik.value) + (y - f) ** 2 / lik.value)
    _check_y(lik, y)
    if lik.kind == "bernoulli":
        return _probit_terms(y, f)[0]
    return _studentt_terms(y, f, lik.value, lik.dof)[0]


def expected_log_lik_quadrature(lik: LikelihoodParams, q, y, order: Optional[int] = None):
    """Gauss-Hermite estimate of E_q[log p(y|f)] for any likelihood kind."""
    _validate(lik)
    x, w = gauss_hermite(lik.order if order is None else int(order))
    mean = np.asarray(q[0], dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(q[1], dtype=float), 0.0))
    y = np.asarray(y, dtype=float)
    out = log_density(lik, y[..., None], mean[..., None] + sd[..., None] * x) @ w
    return float(out) if np.ndim(out) == 0 else out


def expected_log_lik(lik: LikelihoodParams, q, y):
    """Scalar or vectorized E_{f~q}[log p(y|f)] for a GaussianMarginal-like q."""
    _validate(lik)
    mean, var = q
    val = expected_log_lik_grad(lik, np.asarray(mean, float), np.asarray(var, float), y)[0]
    return float(val) if np.ndim(val) == 0 else val


def _validate(lik):
    if lik.kind != "bernoulli" and not lik.value > 0:
        raise ArgumentError("likelihood noise/scale must be positive")


def predictive_nll(lik: LikelihoodParams, q, y):
    """-log of the predictive density int p(y|f) q(f) df."""
    _validate(lik)
    mean = np.asarray(q[0], dtype=float)
    var = np.maximum(np.asarray(q[1], dtype=float), 0.0)
    y = np.asarray(y, dtype=float)
    if lik.kind == "gaussian":
        tot = var + lik.value
        out = 0.5 * (LOG2PI + np.log(tot) + (y - mean) ** 2 / tot)
    else:
        _check_y(lik, y)
        x, w = gauss_hermite(lik.order)
        f = mean[..., None] + np.sqrt(var)[..., None] * x
        if lik.kind == "bernoulli":
            lp = _probit_terms(y[..., None], f)[0]
        else:
            lp = _studentt_terms(y[..., None], f, lik.value, lik.dof)[0]
        out = -logsumexp(lp, b=w, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def bernoulli_predictive_prob(q):
    """Closed-form p(y=+1) under the probit link."""
    mean, var = np.asarray(q[0], float), np.asarray(q[1], float)
    return ndtr(mean / np.sqrt(1.0 + var))


def predictive_moments(lik: LikelihoodParams, q):
    """Mean and variance of y under the predictive distribution."""
    mean = np.asarray(q[0], dtype=float)
    var = np.asarray(q[1], dtype=float)
    if lik.kind == "gaussian":
        return mean, var + lik.value
    if lik.kind == "bernoulli":
        p = bernoulli_predictive_prob((mean, var))
        return 2.0 * p - 1.0, 4.0 * p * (1.0 - p)
    extra = lik.value ** 2 * lik.dof / (lik.dof - 2.0) if lik.dof > 2 else np.inf
    return mean, var + extra


def rmse(pred_mean, y) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred_mean) - np.asarray(y)) ** 2)))


def accuracy(q, y) -> float:
    p = bernoulli_predictive_prob(q)
    return float(np.mean(np.where(p >= 0.5, 1.0, -1.0) == np.asarray(y)))
