"""Comparison models: exact GP regression, dense SVGP and SWSGP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import smallmat, terms
from .errors import ArgumentError, NumericalError, UnsupportedError
from .kernel import KernelParams, cross_matrix, cross_matrix_vjp
from .likelihood import LikelihoodParams, expected_log_lik_grad, predictive_moments
from .model import FLOOR, VNNGP, ElboBreakdown, VariationalState, _points
from .transforms import sigmoid, softplus

EXACT_MAX_N = 4096


# -- exact GP --------------------------------------------------------------------

@dataclass(frozen=True)
class ExactPosterior:
    alpha: np.ndarray
    chol: smallmat.CholFactor
    X: np.ndarray
    kernel: KernelParams
    noise: float

    def predict_f(self, Xs):
        Xs = _points(Xs, self.kernel.dim)
        Ks = cross_matrix(self.kernel, self.X, Xs)
        mean = Ks.T @ self.alpha
        V = smallmat.tri_solve(self.chol, Ks)
        var = np.maximum(self.kernel.outputscale - np.sum(V * V, axis=0), 0.0)
        return mean, var

    def predict(self, Xs) -> dict:
        mean, var = self.predict_f(Xs)
        return {"f_mean": mean, "f_var": var, "y_mean": mean, "y_var": var + self.noise}


def _exact_checks(lik, X, y, kernel):
    if lik.kind != "gaussian":
        raise UnsupportedError("exact GP needs a Gaussian likelihood")
    X = _points(X, kernel.dim)
    y = np.asarray(y, dtype=float)
    if X.shape[0] > EXACT_MAX_N:
        raise UnsupportedError(f"exact GP limited to N <= {EXACT_MAX_N}, got {X.shape[0]}")
    if X.shape[0] != y.size:
        raise ArgumentError("X and y lengths differ")
    return X, y


def exact_gp_posterior(kp: KernelParams, lik: LikelihoodParams, X, y) -> ExactPosterior:
    X, y = _exact_checks(lik, X, y, kp)
    A = cross_matrix(kp, X, X) + lik.noise * np.eye(X.shape[0])
    F = smallmat.chol_jittered(A, scale=kp.outputscale)
    return ExactPosterior(smallmat.solve(F, y), F, X, kp, lik.noise)


def log_marginal_likelihood(kp: KernelParams, lik: LikelihoodParams, X, y, need_grad=False):
    """log N(y | 0, K + noise I); optionally with gradients for the raw parameters."""
    X, y = _exact_checks(lik, X, y, kp)
    N = y.size
    A = cross_matrix(kp, X, X) + lik.noise * np.eye(N)
    F = smallmat.chol_jittered(A, scale=kp.outputscale)
    alpha = smallmat.solve(F, y)
    val = -0.5 * (y @ alpha + smallmat.logdet(F) + N * np.log(2.0 * np.pi))
    if not need_grad:
        return float(val)
    # d val / dA = (alpha alpha^T - A^{-1}) / 2
    G = 0.5 * (np.outer(alpha, alpha) - smallmat.inverse(F))
    g_ls, g_os = cross_matrix_vjp(kp, X, X, G)
    g_noise = float(np.trace(G)) * float(sigmoid(lik.raw_param))
    return float(val), {"raw_lengthscales": g_ls, "raw_outputscale": g_os, "raw_lik": g_noise}


def fit_exact_gp(kp: KernelParams, lik: LikelihoodParams, X, y, maxiter: int = 200):
    """Type-II maximum likelihood with L-BFGS over raw parameters."""
    D = kp.dim

    def unpack(theta):
        return (kp.with_raw(theta[:D], float(theta[D])), lik.with_raw(float(theta[D + 1])))

    def fun(theta):
        k, l = unpack(theta)
        try:
            v, g = log_marginal_likelihood(k, l, X, y, need_grad=True)
        except NumericalError:
            return np.inf, np.zeros_like(theta)
        return -v, -np.concatenate([g["raw_lengthscales"], [g["raw_outputscale"], g["raw_lik"]]])

    theta0 = np.concatenate([kp.raw_lengthscales, [kp.raw_outputscale, lik.raw_param]])
    res = minimize(fun, theta0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
    return unpack(res.x)


# -- SVGP ------------------------------------------------------------------------

def _q_moments(q):
    if isinstance(q, VariationalState):
        return q.m, q.covariance()
    m, S = q
    m = np.asarray(m, dtype=float)
    S = np.asarray(S, dtype=float)
    return m, (np.diag(S) if S.ndim == 1 else S)


def gaussian_kl(m, S, F: smallmat.CholFactor) -> float:
    """KL(N(m, S) || N(0, L L^T)) with dense S."""
    M = m.size
    Kinv = smallmat.inverse(F)
    Sf = smallmat.chol_jittered(S)
    return float(0.5 * (np.sum(Kinv * S) + m @ Kinv @ m - M + smallmat.logdet(F) - smallmat.logdet(Sf)))


def svgp_kl_exact(kp: KernelParams, Z, q) -> float:
    Z = _points(Z, kp.dim)
    m, S = _q_moments(q)
    F = smallmat.chol_jittered(cross_matrix(kp, Z, Z), scale=kp.outputscale)
    return gaussian_kl(m, S, F)


def kl_subset(kp: KernelParams, Z, q, S) -> float:
    """KL between the marginals of q and of the prior on index subset S."""
    S = np.asarray(S, dtype=np.int64)
    if S.size == 0:
        raise ArgumentError("subset must be nonempty")
    Z = _points(Z, kp.dim)
    m, C = _q_moments(q)
    return svgp_kl_exact(kp, Z[S], (m[S], C[np.ix_(S, S)]))


class SVGP(VNNGP):
    """Dense inducing-point model: every q(f_i) conditions on all M inducing values.

    Inducing points keep the given order, and ``K`` is unused. The KL term is
    always evaluated in full; only the data term is minibatched.
    """

    method = "svgp"

    def __init__(self, kernel: KernelParams, likelihood: LikelihoodParams, Z, state=None,
                 fullrank: bool = False, K: int = 0, **_):
        from .neighbors import Ordering
        Z = _points(Z, kernel.dim)
        super().__init__(kernel, likelihood, Z, 0, Ordering.identity(Z.shape[0]), state,
                         fullrank=fullrank)
        self.K = int(K)

    def attach_data(self, X):
        return None

    def _prior(self):
        kp = self.kernel
        F = smallmat.chol_jittered(cross_matrix(kp, self.Zo, self.Zo), scale=kp.outputscale)
        return F, smallmat.inverse(F)

    def objective(self, X, y, data_batch=None, ip_batch=None, need_grad=True):
        kp = self.kernel
        X = _points(X, kp.dim) if np.size(X) else np.zeros((0, kp.dim))
        y = np.asarray(y, dtype=float)
        N = y.size
        rows, _ = self._batches(N, data_batch, None)
        sd = N / rows.size if N else 1.0
        F, Kinv = self._prior()
        os_ = kp.outputscale
        m = self.state.m
        S = self.state.covariance()
        Xb = X[rows]
        Kxz = cross_matrix(kp, Xb, self.Zo)
        A = Kxz @ Kinv
        f_raw = np.clip(os_ - np.sum(A * Kxz, axis=1), 0.0, os_)
        fl = f_raw < FLOOR * os_
        f = np.where(fl, FLOOR * os_, f_raw)
        AS = A @ S
        mu = A @ m
        v = f + np.sum(AS * A, axis=1)
        if N:
            val, gmu, gv, graw = expected_log_lik_grad(self.likelihood, mu, v, y[rows])
            data = float(np.sum(val))
        else:
            data = 0.0
        kl = gaussian_kl(m, S, F)
        total = sd * data - kl
        elbo = ElboBreakdown(total, data, kl, sd, 1.0, rows, np.arange(self.M))
        if not need_grad:
            return elbo, None

        c_ls, c_os = kp.raw_chain()
        g_ls = np.zeros(kp.dim)
        g_os = 0.0
        alpha = Kinv @ m
        # d(-KL)/dKzz, dm, dS
        G_Kzz = 0.5 * (Kinv @ S @ Kinv + np.outer(alpha, alpha) - Kinv)
        g_m = -alpha
        G_S = -0.5 * Kinv
        g = {}
        if N:
            gmu, gv = sd * gmu, sd * gv
            gf = np.where(fl, 0.0, gv)
            g_os += FLOOR * float(np.sum(gv[fl])) * c_os
            G_A = np.outer(gmu, m) - gf[:, None] * Kxz + 2.0 * gv[:, None] * AS
            G_Kxz = -gf[:, None] * A + G_A @ Kinv
            G_Kzz = G_Kzz - A.T @ G_A @ Kinv
            g_m = g_m + A.T @ gmu
            G_S = G_S + (A.T * gv) @ A
            g_os += float(np.sum(gf)) * c_os
            dl, do = cross_matrix_vjp(kp, Xb, self.Zo, G_Kxz)
            g_ls += dl
            g_os += do
            if self.likelihood.trainable:
                g["raw_lik"] = np.array(sd * float(np.sum(graw)))
        dl, do = cross_matrix_vjp(kp, self.Zo, self.Zo, G_Kzz)
        g_ls += dl
        g_os += do + float(np.trace(G_Kzz)) * F.jitter_used / os_ * c_os
        g["raw_lengthscales"] = g_ls
        g["raw_outputscale"] = np.array(g_os)
        g["m"] = g_m
        if self.state.fullrank:
            L = self.state.chol
            gL = np.tril((G_S + G_S.T) @ L)
            d = np.diag(L)
            gL[np.diag_indices(self.M)] += 1.0 / d
            gL[np.diag_indices(self.M)] *= sigmoid(np.diag(self.state.raw_chol))
            g["raw_chol"] = gL[np.tril_indices(self.M)]
        else:
            s = self.state.s
            g["raw_s"] = (np.diag(G_S) + 0.5 / s) * sigmoid(self.state.raw_s)
        return elbo, g

    def predict_f(self, Xs):
        kp = self.kernel
        Xs = _points(Xs, kp.dim)
        _, Kinv = self._prior()
        Kxz = cross_matrix(kp, Xs, self.Zo)
        A = Kxz @ Kinv
        f = np.maximum(np.clip(kp.outputscale - np.sum(A * Kxz, axis=1), 0.0, None),
                       FLOOR * kp.outputscale)
        var = f + np.sum((A @ self.state.covariance()) * A, axis=1)
        return A @ self.state.m, var

    def fit_gaussian_optimum(self, X, y) -> "SVGP":
        """Exact ELBO maximizer over q(u) under a Gaussian likelihood.

        Full-rank q gets S = inv(Kinv + A^T A / noise); mean-field q gets the
        reciprocal diagonal of that precision. Both share the mean.
        """
        if self.likelihood.kind != "gaussian":
            raise UnsupportedError("closed-form q(u) needs a Gaussian likelihood")
        X = _points(X, self.kernel.dim)
        s2 = self.likelihood.noise
        _, Kinv = self._prior()
        A = cross_matrix(self.kernel, X, self.Zo) @ Kinv
        Lam = Kinv + A.T @ A / s2
        F = smallmat.chol_jittered(Lam, scale=float(np.mean(np.diag(Lam))))
        m = smallmat.solve(F, A.T @ np.asarray(y, dtype=float) / s2)
        if self.state.fullrank:
            Linv = np.linalg.solve(F.L, np.eye(self.M))
            self.state = VariationalState.from_chol(m, np.linalg.cholesky(Linv.T @ Linv))
        else:
            self.state = VariationalState.from_moments(m, 1.0 / np.diag(Lam))
        return self

    def kl(self) -> float:
        return svgp_kl_exact(self.kernel, self.Zo, self.state)

    def precision_factor(self):
        raise UnsupportedError("SVGP has a dense prior")


def svgp_elbo(kp: KernelParams, lik: LikelihoodParams, X, y, Z, q) -> ElboBreakdown:
    """Full-batch SVGP ELBO with dense conditionals and the exact KL."""
    if not isinstance(q, VariationalState):
        m, S = q
        S = np.asarray(S, dtype=float)
        q = (VariationalState.from_moments(m, S) if S.ndim == 1
             else VariationalState.from_chol(m, np.linalg.cholesky(S)))
    return SVGP(kp, lik, Z, state=q).elbo(X, y)


# -- SWSGP -----------------------------------------------------------------------

class SWSGP(VNNGP):
    """Same data term as VNNGP; the KL is the local marginal KL over each batch
    point's neighbor set, weighted by 1/N_b."""

    method = "swsgp"

    def __init__(self, kernel, likelihood, Z, K, ordering=None, state=None, seed=0, **_):
        super().__init__(kernel, likelihood, Z, K, ordering, state, seed, fullrank=False)

    def _kl_part(self, data_batch, ip_batch, g, kgrad, need_grad):
        if data_batch.size == 0:
            return 0.0, 0.0
        w = 1.0 / data_batch.size
        nn = self.index.data_nn
        nbr, cnt = nn.idx[data_batch], nn.cnt[data_batch]
        mask = nbr >= 0
        safe = np.where(mask, nbr, 0)
        s = softplus(self.state.raw_s[safe])
        kl, gm, gs, dls, dos = terms.subset_kl(self.kernel, self.Zo, nbr, cnt,
                                               self.state.m[safe], s,
                                               np.full(nbr.shape[0], w), need_grad)
        if need_grad:
            np.add.at(g["m"], safe[mask], -gm[mask])
            np.add.at(g["s"], safe[mask], -gs[mask])
            kgrad[0] -= dls
            kgrad[1] -= dos
        return float(np.sum(kl)), w

    def _kl_quadratic(self, N: int):
        """Full-batch local KL: each data point's neighbor block enters with weight 1/N."""
        import scipy.sparse as sp
        nn = self.index.data_nn
        rows, cols, vals = [], [], []
        count = np.zeros(self.M)
        for i in range(nn.idx.shape[0]):
            S = nn.idx[i, :nn.cnt[i]]
            F = smallmat.chol_jittered(cross_matrix(self.kernel, self.Zo[S], self.Zo[S]),
                                       scale=self.kernel.outputscale)
            Kinv = smallmat.inverse(F)
            rows.append(np.repeat(S, S.size))
            cols.append(np.tile(S, S.size))
            vals.append(Kinv.ravel() / N)
            count[S] += 1.0
        Q = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.M, self.M))
        return Q, count / (2.0 * N)

    def kl(self) -> float:
        raise UnsupportedError("SWSGP has no global KL; use kl_subset per neighbor set")


def swsgp_objective(kp: KernelParams, lik: LikelihoodParams, X, y, Z, q, K: int,
                    data_batch=None) -> float:
    """SWSGP objective with inducing points taken in the given order."""
    from .neighbors import Ordering
    Z = _points(Z, kp.dim)
    model = SWSGP(kp, lik, Z, K, Ordering.identity(Z.shape[0]), q)
    return model.objective(X, y, data_batch, need_grad=False)[0].total
