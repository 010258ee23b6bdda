"""Variational nearest-neighbor GP: sparse-precision prior over inducing values.

Inducing inputs are kept in ordered positions (``Zo = Z[perm]``); ``m`` and
``s`` are indexed by position. The prior over ``u`` is the product of
conditionals p(u_j | u_n(j)) with n(j) drawn from earlier positions, and each
data point's latent f_i is conditioned on its K nearest inducing points.

The single-term functions near the top are direct transcriptions used by
tests and small experiments. :class:`VNNGP` evaluates the same quantities in
batches through :mod:`vnngp.terms` and carries hand-written gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import smallmat, terms
from .errors import ArgumentError, NumericalError, UnsupportedError
from .kernel import KernelParams, cross_matrix
from .likelihood import GaussianMarginal, LikelihoodParams, expected_log_lik_grad, predictive_moments
from .neighbors import NeighborIndex, NeighborSets, Ordering, build_data_nn, build_inducing_nn
from .transforms import inv_softplus, sigmoid, softplus

# conditional variances below FLOOR * outputscale are raised to it
FLOOR = 1e-8


class ConditionalMoments(NamedTuple):
    b: np.ndarray
    f_cond: float


@dataclass
class VariationalState:
    """Mean-field q(u_j) = N(m_j, s_j), optionally with a full lower factor.

    In full-rank mode ``raw_chol`` holds the factor of the covariance with
    its diagonal in softplus form; ``raw_s`` is then unused.
    """

    m: np.ndarray
    raw_s: np.ndarray
    raw_chol: Optional[np.ndarray] = None

    @classmethod
    def init(cls, M: int, fullrank: bool = False) -> "VariationalState":
        raw_s = np.full(M, float(inv_softplus(1.0)))
        raw_chol = None
        if fullrank:
            raw_chol = np.zeros((M, M))
            raw_chol[np.diag_indices(M)] = float(inv_softplus(1.0))
        return cls(np.zeros(M), raw_s, raw_chol)

    @classmethod
    def from_moments(cls, m, s) -> "VariationalState":
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0):
            raise ArgumentError("variational variances must be positive")
        return cls(np.asarray(m, dtype=float).copy(), inv_softplus(s))

    @classmethod
    def from_chol(cls, m, Lq) -> "VariationalState":
        Lq = np.tril(np.asarray(Lq, dtype=float))
        d = np.diag(Lq)
        if np.any(d <= 0):
            raise ArgumentError("full-rank factor needs a positive diagonal")
        raw = Lq.copy()
        raw[np.diag_indices_from(raw)] = inv_softplus(d)
        return cls(np.asarray(m, dtype=float).copy(), inv_softplus(d * d), raw)

    @property
    def M(self) -> int:
        return self.m.size

    @property
    def s(self) -> np.ndarray:
        if self.raw_chol is not None:
            return np.sum(self.chol ** 2, axis=1)
        return softplus(self.raw_s)

    @property
    def fullrank(self) -> bool:
        return self.raw_chol is not None

    @property
    def chol(self) -> Optional[np.ndarray]:
        if self.raw_chol is None:
            return None
        L = np.tril(self.raw_chol, -1)
        L[np.diag_indices_from(L)] = softplus(np.diag(self.raw_chol))
        return L

    def covariance(self) -> np.ndarray:
        if self.raw_chol is None:
            return np.diag(self.s)
        L = self.chol
        return L @ L.T


@dataclass
class ElboBreakdown:
    """total = scale_data * data_term - scale_kl * kl_term (batch sums)."""

    total: float
    data_term: float
    kl_term: float
    scale_data: float = 1.0
    scale_kl: float = 1.0
    data_batch: Optional[np.ndarray] = field(default=None, repr=False)
    ip_batch: Optional[np.ndarray] = field(default=None, repr=False)


# -- single-term reference functions -------------------------------------------

def _points(A, D):
    A = np.asarray(A, dtype=float)
    return A.reshape(-1, D) if A.ndim < 2 else A


def conditional_moments(kp: KernelParams, Z, nbrs, target) -> ConditionalMoments:
    """b = K_nn^{-1} k_n and f = k_tt - k_n^T b for one target point."""
    Z = _points(Z, kp.dim)
    nbrs = np.asarray(nbrs, dtype=np.int64)
    target = _points(target, kp.dim)
    ktt = kp.outputscale
    if nbrs.size == 0:
        return ConditionalMoments(np.zeros(0), ktt)
    Zn = Z[nbrs]
    F = smallmat.chol_jittered(cross_matrix(kp, Zn, Zn), scale=ktt)
    kn = cross_matrix(kp, Zn, target)[:, 0]
    b = smallmat.solve(F, kn)
    f = float(np.clip(ktt - kn @ b, 0.0, ktt))
    return ConditionalMoments(b, f)


def q_f_marginal(vs: VariationalState, cm: ConditionalMoments, nbrs, k_self=None) -> GaussianMarginal:
    """Mean-field q(f) = N(b^T m_n, f + sum b^2 s_n).

    ``k_self`` is only consulted for an empty neighbor set.
    """
    nbrs = np.asarray(nbrs, dtype=np.int64)
    if nbrs.size == 0:
        var = cm.f_cond if k_self is None else k_self
        return GaussianMarginal(0.0, float(var))
    b = np.asarray(cm.b)
    if vs.fullrank:
        C = vs.covariance()[np.ix_(nbrs, nbrs)]
        var = cm.f_cond + b @ C @ b
    else:
        var = cm.f_cond + np.sum(b * b * vs.s[nbrs])
    return GaussianMarginal(float(b @ vs.m[nbrs]), float(var))


def kl_meanfield_term(vs: VariationalState, cm: ConditionalMoments, j: int, nbrs, floor=None) -> float:
    """E_{q(u_n)} KL(q(u_j) || p(u_j | u_n)) in closed form."""
    f = cm.f_cond if floor is None else max(cm.f_cond, floor)
    if not f > 0:
        raise NumericalError(f"conditional variance of inducing point {j} is not positive")
    nbrs = np.asarray(nbrs, dtype=np.int64)
    s = vs.s
    b = np.asarray(cm.b)
    r = vs.m[j] - b @ vs.m[nbrs] if nbrs.size else vs.m[j]
    a = s[j] + np.sum(b * b * s[nbrs]) + r * r
    return float(0.5 * (np.log(f) - np.log(s[j]) - 1.0 + a / f))


def kl_meanfield_total(vs: VariationalState, kp: KernelParams, Zo, idx: NeighborIndex) -> float:
    """Sum of per-point expected conditional KLs over all inducing points."""
    Zo = _points(Zo, kp.dim)
    M = Zo.shape[0]
    cache = terms.conditional(kp, Zo, Zo, idx.inducing_nn.idx, idx.inducing_nn.cnt)
    return float(np.sum(_kl_rows(vs.m, vs.s, cache, idx.inducing_nn, np.arange(M),
                                 FLOOR * kp.outputscale)))


def _kl_rows(m, s, cache, nn: NeighborSets, rows, floor):
    b = cache.b
    f = np.maximum(cache.f, floor)
    nbr = nn.idx[rows]
    mask = nbr >= 0
    safe = np.where(mask, nbr, 0)
    mn = np.where(mask, m[safe], 0.0)
    sn = np.where(mask, s[safe], 0.0)
    r = m[rows] - np.sum(b * mn, axis=1)
    a = s[rows] + np.sum(b * b * sn, axis=1) + r * r
    return 0.5 * (np.log(f) - np.log(s[rows]) - 1.0 + a / f)


def precision_cholesky_row(kp: KernelParams, Zo, idx: NeighborIndex, j: int):
    """Nonzeros of row j of L with K_zz^{-1} ~ L^T L: ``(columns, values)``."""
    Zo = _points(Zo, kp.dim)
    nbrs = idx.inducing_nn[j]
    cm = conditional_moments(kp, Zo, nbrs, Zo[j])
    f = max(cm.f_cond, FLOOR * kp.outputscale)
    inv_sd = 1.0 / np.sqrt(f)
    cols = np.concatenate([nbrs, [j]]).astype(np.int64)
    vals = np.concatenate([-inv_sd * cm.b, [inv_sd]])
    return cols, vals


def precision_factor(kp: KernelParams, Zo, idx: NeighborIndex) -> sp.csr_matrix:
    """Assemble the sparse lower-triangular factor row by row."""
    Zo = _points(Zo, kp.dim)
    M = Zo.shape[0]
    cache = terms.conditional(kp, Zo, Zo, idx.inducing_nn.idx, idx.inducing_nn.cnt)
    inv_sd = 1.0 / np.sqrt(np.maximum(cache.f, FLOOR * kp.outputscale))
    rows, cols, vals = [], [], []
    for j in range(M):
        nb = idx.inducing_nn[j]
        c = nb.size
        rows.append(np.full(c + 1, j))
        cols.append(np.concatenate([nb, [j]]))
        vals.append(np.concatenate([-inv_sd[j] * cache.b[j, :c], [inv_sd[j]]]))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(M, M))


def kl_fullrank(vs: VariationalState, kp: KernelParams, Zo, idx: NeighborIndex) -> float:
    """KL(N(m, C) || N(0, (L^T L)^{-1})) accumulated over rows of L.

    Each row touches only n(i) and i, so the trace term is the quadratic form
    of that row with the matching block of the variational covariance C.
    """
    Zo = _points(Zo, kp.dim)
    M = Zo.shape[0]
    C = vs.covariance()
    log_diag_q = np.log(np.diag(vs.chol)) if vs.fullrank else 0.5 * np.log(vs.s)
    total = 0.0
    for i in range(M):
        cols, vals = precision_cholesky_row(kp, Zo, idx, i)
        trace_i = vals @ C[np.ix_(cols, cols)] @ vals
        mean_i = vals @ vs.m[cols]
        total += -2.0 * np.log(vals[-1]) - 2.0 * log_diag_q[i] - 1.0 + trace_i + mean_i ** 2
    return float(0.5 * total)


# -- batched model ---------------------------------------------------------------

class VNNGP:
    """VNNGP model: kernel, likelihood, ordered inducing inputs, q(u), neighbor index."""

    method = "vnngp"

    def __init__(self, kernel: KernelParams, likelihood: LikelihoodParams, Z, K: int,
                 ordering: Optional[Ordering] = None, state: Optional[VariationalState] = None,
                 seed: int = 0, fullrank: bool = False):
        Z = _points(Z, kernel.dim)
        if Z.shape[1] != kernel.dim:
            raise ArgumentError("inducing inputs do not match kernel dimension")
        M = Z.shape[0]
        if ordering is None:
            ordering = Ordering.random(M, seed)
        self.kernel = kernel
        self.likelihood = likelihood
        self.ordering = ordering
        self.Zo = ordering.apply(Z)
        self.K = int(K)
        self.index = build_inducing_nn(Z, ordering, self.K)
        self.state = state if state is not None else VariationalState.init(M, fullrank)
        if self.state.M != M:
            raise ArgumentError("variational state size does not match inducing points")
        self._X = None

    @property
    def M(self) -> int:
        return self.Zo.shape[0]

    # data-side index
    def attach_data(self, X) -> NeighborSets:
        X = _points(X, self.kernel.dim)
        if self._X is not None and (X is self._X or
                                    (X.shape == self._X.shape and np.array_equal(X, self._X))):
            return self.index.data_nn
        self.index = self.index.with_data(build_data_nn(X, self.Zo, self.K))
        self._X = X
        return self.index.data_nn

    # parameters
    def params(self) -> dict:
        p = {"raw_lengthscales": self.kernel.raw_lengthscales.copy(),
             "raw_outputscale": np.array(self.kernel.raw_outputscale),
             "m": self.state.m.copy()}
        if self.likelihood.trainable:
            p["raw_lik"] = np.array(self.likelihood.raw_param)
        if self.state.fullrank:
            p["raw_chol"] = self.state.raw_chol[np.tril_indices(self.M)].copy()
        else:
            p["raw_s"] = self.state.raw_s.copy()
        return p

    def set_params(self, p: dict):
        if "raw_lengthscales" in p or "raw_outputscale" in p:
            self.kernel = self.kernel.with_raw(
                p.get("raw_lengthscales"),
                None if "raw_outputscale" not in p else float(p["raw_outputscale"]))
        if "raw_lik" in p:
            self.likelihood = self.likelihood.with_raw(float(p["raw_lik"]))
        if "m" in p:
            self.state.m = np.asarray(p["m"], dtype=float).copy()
        if "raw_s" in p:
            self.state.raw_s = np.asarray(p["raw_s"], dtype=float).copy()
        if "raw_chol" in p:
            R = np.zeros((self.M, self.M))
            R[np.tril_indices(self.M)] = p["raw_chol"]
            self.state.raw_chol = R

    # objective
    def _batches(self, N, data_batch, ip_batch):
        data_batch = np.arange(N) if data_batch is None else np.asarray(data_batch, dtype=np.int64)
        ip_batch = np.arange(self.M) if ip_batch is None else np.asarray(ip_batch, dtype=np.int64)
        if N > 0 and data_batch.size == 0:
            raise ArgumentError("empty data batch")
        if ip_batch.size == 0:
            raise ArgumentError("empty inducing-point batch")
        if data_batch.size and (data_batch.min() < 0 or data_batch.max() >= N):
            raise ArgumentError("data batch index out of range")
        if ip_batch.min() < 0 or ip_batch.max() >= self.M:
            raise ArgumentError("inducing batch index out of range")
        return data_batch, ip_batch

    def _new_grads(self):
        g = {"raw_lengthscales": np.zeros(self.kernel.dim), "raw_outputscale": 0.0,
             "m": np.zeros(self.M)}
        if self.likelihood.trainable:
            g["raw_lik"] = 0.0
        if self.state.fullrank:
            g["C"] = np.zeros((self.M, self.M))
        else:
            g["s"] = np.zeros(self.M)
        return g

    def _finish_grads(self, g, kgrad):
        c_ls, c_os = self.kernel.raw_chain()
        out = {"raw_lengthscales": kgrad[0] * c_ls, "raw_outputscale": np.array(kgrad[1] * c_os),
               "m": g["m"]}
        if "raw_lik" in g:
            out["raw_lik"] = np.array(g["raw_lik"])
        if self.state.fullrank:
            G = g["C"]
            L = self.state.chol
            gL = np.tril((G + G.T) @ L) + g.get("Ldiag", 0.0)
            gL[np.diag_indices(self.M)] *= sigmoid(np.diag(self.state.raw_chol))
            out["raw_chol"] = gL[np.tril_indices(self.M)]
        else:
            out["raw_s"] = g["s"] * sigmoid(self.state.raw_s)
        return out

    def _data_term(self, X, y, rows, weight, g, kgrad, need_grad):
        kp = self.kernel
        dn = self.index.data_nn
        nbr, cnt = dn.idx[rows], dn.cnt[rows]
        mask = nbr >= 0
        safe = np.where(mask, nbr, 0)
        cache = terms.conditional(kp, self.Zo, X[rows], nbr, cnt)
        floor = FLOOR * kp.outputscale
        fl = cache.f < floor
        f = np.where(fl, floor, cache.f)
        b = cache.b
        m = self.state.m
        mn = np.where(mask, m[safe], 0.0)
        if self.state.fullrank:
            C = self.state.covariance()
            Cn = np.where(mask[:, :, None] & mask[:, None, :], C[safe[:, :, None], safe[:, None, :]], 0.0)
            Cb = np.einsum("bij,bj->bi", Cn, b)
            v = f + np.sum(b * Cb, axis=1)
        else:
            sn = np.where(mask, softplus(self.state.raw_s[safe]), 0.0)
            Cb = b * sn
            v = f + np.sum(b * Cb, axis=1)
        mu = np.sum(b * mn, axis=1)
        val, gmu, gv, graw = expected_log_lik_grad(self.likelihood, mu, v, y[rows])
        if need_grad:
            gb = weight * (gmu[:, None] * mn + 2.0 * gv[:, None] * Cb)
            gf = np.where(fl, 0.0, weight * gv)
            kgrad[1] += weight * FLOOR * float(np.sum(gv[fl]))
            dls, dos = terms.conditional_vjp(kp, self.Zo, X[rows], nbr, cnt, cache, gb, gf)
            kgrad[0] += dls
            kgrad[1] += dos
            np.add.at(g["m"], safe[mask], (weight * gmu[:, None] * b)[mask])
            if self.state.fullrank:
                outer = weight * gv[:, None, None] * b[:, :, None] * b[:, None, :]
                pm = mask[:, :, None] & mask[:, None, :]
                np.add.at(g["C"], (np.broadcast_to(safe[:, :, None], pm.shape)[pm],
                                   np.broadcast_to(safe[:, None, :], pm.shape)[pm]), outer[pm])
            else:
                np.add.at(g["s"], safe[mask], (weight * gv[:, None] * b * b)[mask])
            if "raw_lik" in g:
                g["raw_lik"] += weight * float(np.sum(graw))
        return float(np.sum(val))

    def _kl_term(self, rows, weight, g, kgrad, need_grad):
        """Sum over ``rows`` of the expected conditional KLs; adds -weight * grad."""
        kp = self.kernel
        nn = self.index.inducing_nn
        nbr, cnt = nn.idx[rows], nn.cnt[rows]
        mask = nbr >= 0
        safe = np.where(mask, nbr, 0)
        cache = terms.conditional(kp, self.Zo, self.Zo[rows], nbr, cnt)
        floor = FLOOR * kp.outputscale
        fl = cache.f < floor
        f = np.where(fl, floor, cache.f)
        b = cache.b
        m = self.state.m
        mn = np.where(mask, m[safe], 0.0)
        r = m[rows] - np.sum(b * mn, axis=1)
        if self.state.fullrank:
            C = self.state.covariance()
            Cnn = np.where(mask[:, :, None] & mask[:, None, :], C[safe[:, :, None], safe[:, None, :]], 0.0)
            Cnj = np.where(mask, C[safe, rows[:, None]], 0.0)
            Cb = np.einsum("bij,bj->bi", Cnn, b)
            cjj = C[rows, rows]
            a = cjj - 2.0 * np.sum(b * Cnj, axis=1) + np.sum(b * Cb, axis=1) + r * r
            log_q = 2.0 * np.log(softplus(self.state.raw_chol[rows, rows]))
        else:
            sj = softplus(self.state.raw_s[rows])
            sn = np.where(mask, softplus(self.state.raw_s[safe]), 0.0)
            Cb = b * sn
            a = sj + np.sum(b * Cb, axis=1) + r * r
            log_q = np.log(sj)
        kl = 0.5 * (np.log(f) - log_q - 1.0 + a / f)
        if need_grad:
            w = -weight
            gb = w * (Cb - r[:, None] * mn) / f[:, None]
            if self.state.fullrank:
                gb = gb - w * Cnj / f[:, None]
            dkl_df = 0.5 * (1.0 / f - a / (f * f))
            gf = np.where(fl, 0.0, w * dkl_df)
            kgrad[1] += w * FLOOR * float(np.sum(dkl_df[fl]))
            dls, dos = terms.conditional_vjp(kp, self.Zo, self.Zo[rows], nbr, cnt, cache, gb, gf)
            kgrad[0] += dls
            kgrad[1] += dos
            np.add.at(g["m"], rows, w * r / f)
            np.add.at(g["m"], safe[mask], (-w * r[:, None] * b / f[:, None])[mask])
            if self.state.fullrank:
                G = g["C"]
                np.add.at(G, (rows, rows), w * 0.5 / f)
                cross = (-w * 0.5 * b / f[:, None])
                np.add.at(G, (safe[mask], np.broadcast_to(rows[:, None], mask.shape)[mask]), cross[mask])
                np.add.at(G, (np.broadcast_to(rows[:, None], mask.shape)[mask], safe[mask]), cross[mask])
                outer = w * 0.5 * b[:, :, None] * b[:, None, :] / f[:, None, None]
                pm = mask[:, :, None] & mask[:, None, :]
                np.add.at(G, (np.broadcast_to(safe[:, :, None], pm.shape)[pm],
                              np.broadcast_to(safe[:, None, :], pm.shape)[pm]), outer[pm])
                Ldiag = g.setdefault("Ldiag", np.zeros((self.M, self.M)))
                dq = softplus(self.state.raw_chol[rows, rows])
                np.add.at(Ldiag, (rows, rows), -w / dq)
            else:
                np.add.at(g["s"], rows, w * 0.5 * (1.0 / f - 1.0 / sj))
                np.add.at(g["s"], safe[mask], (w * 0.5 * b * b / f[:, None])[mask])
        return float(np.sum(kl))

    def objective(self, X, y, data_batch=None, ip_batch=None, need_grad=True):
        """ELBO estimate on the given batches and its gradient (raw parameters).

        Omitted batches mean full sums, which gives the exact ELBO.
        """
        X = _points(X, self.kernel.dim) if np.size(X) else np.zeros((0, self.kernel.dim))
        y = np.asarray(y, dtype=float)
        N = y.size
        if N:
            self.attach_data(X)
        data_batch, ip_batch = self._batches(N, data_batch, ip_batch)
        g = self._new_grads()
        kgrad = [np.zeros(self.kernel.dim), 0.0]
        sd = N / data_batch.size if N else 1.0
        data = self._data_term(X, y, data_batch, sd, g, kgrad, need_grad) if N else 0.0
        kl, sk = self._kl_part(data_batch, ip_batch, g, kgrad, need_grad)
        elbo = ElboBreakdown(sd * data - sk * kl, data, kl, sd, sk, data_batch, ip_batch)
        return elbo, (self._finish_grads(g, kgrad) if need_grad else None)

    def _kl_part(self, data_batch, ip_batch, g, kgrad, need_grad):
        sk = self.M / ip_batch.size
        return self._kl_term(ip_batch, sk, g, kgrad, need_grad), sk

    def elbo(self, X, y) -> ElboBreakdown:
        return self.objective(X, y, need_grad=False)[0]

    # prediction
    def predict_f(self, Xs):
        """Arrays (mean, var) of q(f*) using each point's K nearest inducing points."""
        Xs = _points(Xs, self.kernel.dim)
        nn = build_data_nn(Xs, self.Zo, self.K)
        mask = nn.idx >= 0
        safe = np.where(mask, nn.idx, 0)
        cache = terms.conditional(self.kernel, self.Zo, Xs, nn.idx, nn.cnt)
        f = np.maximum(cache.f, FLOOR * self.kernel.outputscale)
        b = cache.b
        mean = np.sum(b * np.where(mask, self.state.m[safe], 0.0), axis=1)
        if self.state.fullrank:
            C = self.state.covariance()
            Cn = np.where(mask[:, :, None] & mask[:, None, :], C[safe[:, :, None], safe[:, None, :]], 0.0)
            var = f + np.einsum("bi,bij,bj->b", b, Cn, b)
        else:
            var = f + np.sum(b * b * np.where(mask, self.state.s[safe], 0.0), axis=1)
        return mean, var

    def predict(self, Xs) -> dict:
        mean, var = self.predict_f(Xs)
        ym, yv = predictive_moments(self.likelihood, (mean, var))
        return {"f_mean": mean, "f_var": var, "y_mean": ym, "y_var": yv}

    # closed-form optimum under a Gaussian likelihood
    def data_design(self, X) -> sp.csr_matrix:
        """Sparse N x M matrix whose row i holds b_i on the neighbor set n(i)."""
        X = _points(X, self.kernel.dim)
        dn = self.attach_data(X)
        cache = terms.conditional(self.kernel, self.Zo, X, dn.idx, dn.cnt)
        mask = dn.idx >= 0
        rows = np.broadcast_to(np.arange(X.shape[0])[:, None], mask.shape)[mask]
        return sp.csr_matrix((cache.b[mask], (rows, dn.idx[mask])), shape=(X.shape[0], self.M))

    def _kl_quadratic(self, N: int):
        """(Q, c) with KL = 1/2 m^T Q m + 1/2 sum_k Q_kk s_k - sum_k c_k log s_k + const."""
        L = self.precision_factor()
        return (L.T @ L).tocsc(), np.full(self.M, 0.5)

    def fit_gaussian_optimum(self, X, y) -> "VNNGP":
        """Set q(u) to the exact ELBO maximizer at the current hyperparameters.

        With a Gaussian likelihood the mean-field ELBO separates into a
        quadratic in m and independent terms in each s_k, so
        A = Q + B^T B / noise gives m = A^{-1} B^T y / noise and
        s_k = 2 c_k / A_kk. Positions no objective term touches keep m = 0, s = 1.
        """
        if self.likelihood.kind != "gaussian":
            raise UnsupportedError("closed-form q(u) needs a Gaussian likelihood")
        if self.state.fullrank:
            raise UnsupportedError("closed-form q(u) is implemented for mean-field q only")
        y = np.asarray(y, dtype=float)
        s2 = self.likelihood.noise
        B = self.data_design(X)
        Q, c = self._kl_quadratic(y.size)
        A = (Q + (B.T @ B) / s2).tocsc()
        used = np.flatnonzero(c > 0)
        Au = A[used][:, used].tocsc()
        m = np.zeros(self.M)
        s = np.ones(self.M)
        m[used] = spla.spsolve(Au, (B.T @ y)[used] / s2)
        s[used] = 2.0 * c[used] / Au.diagonal()
        if not (np.all(np.isfinite(m)) and np.all(s > 0)):
            raise NumericalError("closed-form variational solve produced invalid moments")
        self.state = VariationalState.from_moments(m, s)
        return self

    def precision_factor(self) -> sp.csr_matrix:
        return precision_factor(self.kernel, self.Zo, self.index)

    def kl(self) -> float:
        if self.state.fullrank:
            return kl_fullrank(self.state, self.kernel, self.Zo, self.index)
        return kl_meanfield_total(self.state, self.kernel, self.Zo, self.index)

    def inducing_inputs(self) -> np.ndarray:
        """Inducing inputs in their original order."""
        Z = np.empty_like(self.Zo)
        Z[self.ordering.perm] = self.Zo
        return Z
