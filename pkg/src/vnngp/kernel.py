"""Stationary ARD covariance functions: squared exponential and Matern 5/2.

Every function here broadcasts over leading batch axes, so the same code
serves a single ``(n, m)`` cross-covariance and a stack of ``(B, K, K)``
neighbor blocks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .transforms import inv_softplus, sigmoid, softplus

KINDS = ("se", "matern52")
_ALIASES = {
    "se": "se", "rbf": "se", "squaredexponential": "se", "squared_exponential": "se",
    "matern52": "matern52", "matern": "matern52", "matern_52": "matern52",
}
SQRT5 = np.sqrt(5.0)


def kind_code(kind: str) -> int:
    return KINDS.index(kind)


@dataclass(frozen=True)
class KernelParams:
    """Kernel hyperparameters held in unconstrained (softplus) form."""

    kind: str
    raw_lengthscales: np.ndarray
    raw_outputscale: float

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower())
        if kind is None:
            raise ArgumentError(f"unknown kernel kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        raw = np.atleast_1d(np.asarray(self.raw_lengthscales, dtype=float)).copy()
        if raw.ndim != 1 or raw.size == 0:
            raise ArgumentError("raw_lengthscales must be a nonempty vector")
        raw.setflags(write=False)
        object.__setattr__(self, "raw_lengthscales", raw)
        object.__setattr__(self, "raw_outputscale", float(self.raw_outputscale))

    @classmethod
    def from_constrained(cls, kind, lengthscales, outputscale) -> "KernelParams":
        ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
        if np.any(ls <= 0) or outputscale <= 0:
            raise ArgumentError("lengthscales and outputscale must be positive")
        return cls(kind, inv_softplus(ls), float(inv_softplus(outputscale)))

    @property
    def lengthscales(self) -> np.ndarray:
        return softplus(self.raw_lengthscales)

    @property
    def outputscale(self) -> float:
        return float(softplus(self.raw_outputscale))

    @property
    def dim(self) -> int:
        return self.raw_lengthscales.size

    def with_raw(self, raw_lengthscales=None, raw_outputscale=None) -> "KernelParams":
        return KernelParams(
            self.kind,
            self.raw_lengthscales if raw_lengthscales is None else raw_lengthscales,
            self.raw_outputscale if raw_outputscale is None else raw_outputscale,
        )

    def raw_chain(self):
        """d(constrained)/d(raw) for lengthscales and outputscale."""
        return sigmoid(self.raw_lengthscales), float(sigmoid(self.raw_outputscale))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lengthscales": [format(v, ".17g") for v in self.lengthscales],
            "outputscale": format(self.outputscale, ".17g"),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelParams":
        return cls.from_constrained(
            d["kind"], [float(v) for v in d["lengthscales"]], float(d["outputscale"]))


def profile(kind: str, r2):
    """Unit-variance correlation as a function of the scaled squared distance."""
    r2 = np.asarray(r2, dtype=float)
    if kind == "se":
        return np.exp(-0.5 * r2)
    a = SQRT5 * np.sqrt(r2)
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


def profile_grad(kind: str, r2):
    """Derivative of :func:`profile` with respect to ``r2`` (finite at 0)."""
    r2 = np.asarray(r2, dtype=float)
    if kind == "se":
        return -0.5 * np.exp(-0.5 * r2)
    a = SQRT5 * np.sqrt(r2)
    return -(5.0 / 6.0) * (1.0 + a) * np.exp(-a)


def _check_dim(params: KernelParams, *arrays):
    for a in arrays:
        if a.shape[-1] != params.dim:
            raise ArgumentError(
                f"point dimension {a.shape[-1]} does not match {params.dim} lengthscales")


def scaled_sqdist(params: KernelParams, A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    d = (A[..., :, None, :] - B[..., None, :, :]) / params.lengthscales
    return np.einsum("...d,...d->...", d, d)


def evaluate(params: KernelParams, x, x2) -> float:
    """k(x, x2) for two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    _check_dim(params, x, x2)
    if np.array_equal(x, x2):
        return params.outputscale
    r2 = float(np.sum(((x - x2) / params.lengthscales) ** 2))
    return params.outputscale * float(profile(params.kind, r2))


def cross_matrix(params: KernelParams, A, B) -> np.ndarray:
    """Cross-covariance K(A, B); A is (..., n, D), B is (..., m, D)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A.reshape(-1, params.dim) if A.size else np.zeros((0, params.dim))
    if B.ndim == 1:
        B = B.reshape(-1, params.dim) if B.size else np.zeros((0, params.dim))
    _check_dim(params, A, B)
    return params.outputscale * profile(params.kind, scaled_sqdist(params, A, B))


def diag(params: KernelParams, A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return np.full(A.shape[:-1], params.outputscale)


def cross_matrix_vjp(params: KernelParams, A, B, G):
    """Pull an upstream gradient G (shape of K(A, B)) back to raw parameters.

    Returns ``(grad_raw_lengthscales, grad_raw_outputscale)`` of
    ``sum(G * K(A, B))``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    G = np.asarray(G, dtype=float)
    ls = params.lengthscales
    os_ = params.outputscale
    r2 = scaled_sqdist(params, A, B)
    h = profile(params.kind, r2)
    dh = profile_grad(params.kind, r2)
    g_os = float(np.sum(G * h))
    gdh = G * dh * os_
    g_ls = np.empty(params.dim)
    for d in range(params.dim):
        diff = A[..., :, None, d] - B[..., None, :, d]
        g_ls[d] = np.sum(gdh * diff * diff) * (-2.0 / ls[d] ** 3)
    c_ls, c_os = params.raw_chain()
    return g_ls * c_ls, g_os * c_os
