"""Batched nearest-neighbor kernels: the O(K^3) inner loop of every objective.

Two implementations share one contract:

* ``*_nb`` -- per-term loops compiled with numba,
* ``*_np`` -- stacked ``(B, W, W)`` arrays through numpy's batched LAPACK.

``vnngp._accel.USE_NUMBA`` picks one at call time. A batch is described by
target points ``T`` (B, D), padded neighbor rows ``nbr`` (B, W) into ``Z``
and counts ``cnt``. Returned gradients are with respect to the *constrained*
lengthscales and outputscale.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _accel
from ._accel import njit
from .errors import NumericalError
from .kernel import KernelParams, kind_code, profile, profile_grad
from .smallmat import JITTER_LADDER, cho_solve_nb, chol_inplace_nb

_LADDER = np.asarray(JITTER_LADDER, dtype=float)


class CondCache(NamedTuple):
    fac: np.ndarray     # (B, W, W) Cholesky factors (numba) or jittered blocks (numpy)
    b: np.ndarray       # (B, W) regression weights, zero-padded
    f: np.ndarray       # (B,) conditional variances clamped to [0, k(t, t)]
    jitter: np.ndarray  # (B,) jitter added to each block
    numba: bool


# -- compiled versions ---------------------------------------------------------

@njit(cache=True, inline="always")
def _prof_nb(kind, r2):
    if kind == 0:
        return np.exp(-0.5 * r2)
    a = np.sqrt(5.0 * r2)
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


@njit(cache=True, inline="always")
def _dprof_nb(kind, r2):
    if kind == 0:
        return -0.5 * np.exp(-0.5 * r2)
    a = np.sqrt(5.0 * r2)
    return -(5.0 / 6.0) * (1.0 + a) * np.exp(-a)


@njit(cache=True, inline="always")
def _r2_nb(X, i, Y, j, inv_ls):
    s = 0.0
    for d in range(inv_ls.shape[0]):
        t = (X[i, d] - Y[j, d]) * inv_ls[d]
        s += t * t
    return s


@njit(cache=True, inline="always")
def _fill_block_nb(Z, rows, c, kind, inv_ls, os_, jit, A):
    for a in range(c):
        A[a, a] = os_ + jit
        for q in range(a):
            v = os_ * _prof_nb(kind, _r2_nb(Z, rows[a], Z, rows[q], inv_ls))
            A[a, q] = v
            A[q, a] = v


@njit(cache=True)
def _factor_nb(Z, rows, c, kind, inv_ls, os_, ladder, A):
    for li in range(ladder.shape[0]):
        jit = ladder[li] * os_
        _fill_block_nb(Z, rows, c, kind, inv_ls, os_, jit, A)
        if chol_inplace_nb(A, c):
            return jit
    return -1.0


@njit(cache=True, inline="always")
def _pair_grad_nb(g, X, i, Y, j, kind, inv_ls, c3, os_, g_ls):
    """Accumulate g * dk(X[i], Y[j]) into g_ls; return the outputscale part.

    ``c3`` holds -2 / ls**3 per dimension.
    """
    r2 = _r2_nb(X, i, Y, j, inv_ls)
    if kind == 0:
        h = np.exp(-0.5 * r2)
        dh = -0.5 * h
    else:
        a = np.sqrt(5.0 * r2)
        ea = np.exp(-a)
        h = (1.0 + a + a * a / 3.0) * ea
        dh = -(5.0 / 6.0) * (1.0 + a) * ea
    dh *= os_ * g
    for d in range(c3.shape[0]):
        t = X[i, d] - Y[j, d]
        g_ls[d] += dh * t * t * c3[d]
    return g * h


@njit(cache=True)
def cond_forward_nb(Z, T, nbr, cnt, kind, ls, os_, ladder, fac, B, F, J):
    W = nbr.shape[1]
    inv_ls = 1.0 / ls
    kn = np.empty(max(W, 1))
    for t in range(T.shape[0]):
        c = cnt[t]
        rows = nbr[t]
        for a in range(c):
            kn[a] = os_ * _prof_nb(kind, _r2_nb(Z, rows[a], T, t, inv_ls))
        jit = _factor_nb(Z, rows, c, kind, inv_ls, os_, ladder, fac[t])
        if jit < 0.0:
            return t
        J[t] = jit
        cho_solve_nb(fac[t], c, kn, B[t])
        f = os_
        for a in range(c):
            f -= kn[a] * B[t, a]
        for a in range(c, W):
            B[t, a] = 0.0
        F[t] = min(max(f, 0.0), os_)
    return -1


@njit(cache=True)
def cond_backward_nb(Z, T, nbr, cnt, kind, ls, os_, fac, B, J, gB, gF, g_ls):
    W = nbr.shape[1]
    inv_ls = 1.0 / ls
    c3 = -2.0 * inv_ls * inv_ls * inv_ls
    w = np.empty(max(W, 1))
    u = np.empty(max(W, 1))
    g_os = 0.0
    for t in range(T.shape[0]):
        c = cnt[t]
        rows = nbr[t]
        gf = gF[t]
        g_os += gf
        if c == 0:
            continue
        cho_solve_nb(fac[t], c, gB[t], w)
        b = B[t]
        diag_scale = 1.0 + J[t] / os_
        for a in range(c):
            u[a] = -w[a] + gf * b[a]
        for a in range(c):
            ra = rows[a]
            g_os += _pair_grad_nb(w[a] - 2.0 * gf * b[a], Z, ra, T, t, kind, inv_ls, c3, os_, g_ls)
            g_os += u[a] * b[a] * diag_scale
            for q in range(a):
                gsum = u[a] * b[q] + u[q] * b[a]
                g_os += _pair_grad_nb(gsum, Z, ra, Z, rows[q], kind, inv_ls, c3, os_, g_ls)
    return g_os


@njit(cache=True)
def subset_kl_nb(Z, nbr, cnt, kind, ls, os_, ladder, mS, sS, wts, need_grad,
                 kl, gm, gs, g_ls):
    W = nbr.shape[1]
    A = np.empty((max(W, 1), max(W, 1)))
    Kinv = np.empty((max(W, 1), max(W, 1)))
    e = np.zeros(max(W, 1))
    col = np.empty(max(W, 1))
    alpha = np.empty(max(W, 1))
    KS = np.empty((max(W, 1), max(W, 1)))
    inv_ls = 1.0 / ls
    c3 = -2.0 * inv_ls * inv_ls * inv_ls
    g_os = 0.0
    for t in range(nbr.shape[0]):
        c = cnt[t]
        rows = nbr[t]
        jit = _factor_nb(Z, rows, c, kind, inv_ls, os_, ladder, A)
        if jit < 0.0:
            return t, g_os
        ld = 0.0
        for a in range(c):
            ld += 2.0 * np.log(A[a, a])
        for a in range(c):
            e[a] = 1.0
            cho_solve_nb(A, c, e, col)
            e[a] = 0.0
            for q in range(c):
                Kinv[q, a] = col[q]
        cho_solve_nb(A, c, mS[t], alpha)
        val = ld - c
        for a in range(c):
            val += sS[t, a] * Kinv[a, a] + mS[t, a] * alpha[a] - np.log(sS[t, a])
        kl[t] = 0.5 * val
        if not need_grad:
            continue
        wt = wts[t]
        for a in range(c):
            gm[t, a] = wt * alpha[a]
            gs[t, a] = wt * 0.5 * (Kinv[a, a] - 1.0 / sS[t, a])
        # KS holds Kinv diag(s) Kinv
        for a in range(c):
            for q in range(c):
                acc = 0.0
                for k in range(c):
                    acc += Kinv[a, k] * sS[t, k] * Kinv[k, q]
                KS[a, q] = acc
        diag_scale = 1.0 + jit / os_
        for a in range(c):
            G = 0.5 * wt * (Kinv[a, a] - KS[a, a] - alpha[a] * alpha[a])
            g_os += G * diag_scale
            for q in range(a):
                G = wt * (Kinv[a, q] - KS[a, q] - alpha[a] * alpha[q])
                g_os += _pair_grad_nb(G, Z, rows[a], Z, rows[q], kind, inv_ls, c3, os_, g_ls)
    return -1, g_os


# -- numpy versions ------------------------------------------------------------

def _gather(Z, nbr, cnt):
    W = nbr.shape[1]
    mask = np.arange(W)[None, :] < cnt[:, None]
    Zn = Z[np.where(mask, nbr, 0)]
    return Zn, mask


def _blocks_np(kp, Z, nbr, cnt):
    """Zero-jitter neighbor blocks with identity on the padding."""
    Zn, mask = _gather(Z, nbr, cnt)
    d = (Zn[:, :, None, :] - Zn[:, None, :, :]) / kp.lengthscales
    r2 = np.einsum("...d,...d->...", d, d)
    K = kp.outputscale * profile(kp.kind, r2)
    pair = mask[:, :, None] & mask[:, None, :]
    eye = np.eye(nbr.shape[1], dtype=bool)[None]
    K = np.where(pair, K, np.where(eye, 1.0, 0.0))
    return K, Zn, mask


def _factor_np(K, mask, os_):
    """Batched Cholesky with a per-block jitter ladder on failure."""
    B = K.shape[0]
    jit = np.zeros(B)
    if B == 0:
        return K.copy(), jit
    try:
        L = np.linalg.cholesky(K)
        if np.all(np.isfinite(L)):
            return K, jit
    except np.linalg.LinAlgError:
        pass
    out = K.copy()
    for t in range(B):
        for lad in _LADDER:
            j = lad * os_
            Kt = K[t] + np.diag(np.where(mask[t], j, 0.0))
            try:
                np.linalg.cholesky(Kt)
            except np.linalg.LinAlgError:
                continue
            out[t] = Kt
            jit[t] = j
            break
        else:
            raise NumericalError(
                f"Cholesky failed for a {int(mask[t].sum())}x{int(mask[t].sum())} "
                f"neighbor block (term {t}) at max jitter {_LADDER[-1] * os_:g}")
    return out, jit


def cond_forward_np(kp, Z, T, nbr, cnt):
    Knn, Zn, mask = _blocks_np(kp, Z, nbr, cnt)
    os_ = kp.outputscale
    d = (Zn - T[:, None, :]) / kp.lengthscales
    kn = os_ * profile(kp.kind, np.einsum("...d,...d->...", d, d))
    kn = np.where(mask, kn, 0.0)
    Kj, jit = _factor_np(Knn, mask, os_)
    if Kj.shape[0]:
        b = np.linalg.solve(Kj, kn[..., None])[..., 0]
    else:
        b = np.zeros_like(kn)
    f = np.clip(os_ - np.sum(kn * b, axis=1), 0.0, os_)
    return CondCache(Kj, b, f, jit, False)


def _pair_vjp_np(kp, A, Bp, G):
    """sum(G * dk(A, Bp)) for elementwise-aligned point arrays (..., D)."""
    ls = kp.lengthscales
    os_ = kp.outputscale
    d = (A - Bp) / ls
    r2 = np.einsum("...d,...d->...", d, d)
    g_os = float(np.sum(G * profile(kp.kind, r2)))
    gdh = G * profile_grad(kp.kind, r2) * os_
    diff2 = (A - Bp) ** 2
    g_ls = gdh.reshape(-1) @ diff2.reshape(-1, ls.size) * (-2.0 / ls ** 3)
    return g_ls, g_os


def cond_backward_np(kp, Z, T, nbr, cnt, cache, gB, gF):
    Zn, mask = _gather(Z, nbr, cnt)
    gB = np.where(mask, gB, 0.0)
    b = cache.b
    os_ = kp.outputscale
    w = np.linalg.solve(cache.fac, gB[..., None])[..., 0] if len(b) else gB
    g_kn = np.where(mask, w - 2.0 * gF[:, None] * b, 0.0)
    u = -w + gF[:, None] * b
    G = u[:, :, None] * b[:, None, :]
    G = G + np.swapaxes(G, 1, 2)
    pair = mask[:, :, None] & mask[:, None, :]
    eye = np.eye(nbr.shape[1], dtype=bool)[None]
    offd = np.where(pair & ~eye, 0.5 * G, 0.0)
    g_ls1, g_os1 = _pair_vjp_np(kp, Zn, np.broadcast_to(T[:, None, :], Zn.shape), g_kn)
    g_ls2, g_os2 = _pair_vjp_np(kp, Zn[:, :, None, :], Zn[:, None, :, :], offd)
    diag_scale = 1.0 + cache.jitter / os_
    g_diag = np.sum(np.where(mask, u * b, 0.0), axis=1) * diag_scale
    g_os = float(np.sum(gF)) + g_os1 + g_os2 + float(np.sum(g_diag))
    return g_ls1 + g_ls2, g_os


def subset_kl_np(kp, Z, nbr, cnt, mS, sS, wts, need_grad):
    K, Zn, mask = _blocks_np(kp, Z, nbr, cnt)
    os_ = kp.outputscale
    Kj, jit = _factor_np(K, mask, os_)
    mS = np.where(mask, mS, 0.0)
    sS = np.where(mask, sS, 1.0)
    B, W = mask.shape
    if B == 0:
        z = np.zeros((0, W))
        return np.zeros(0), z, z.copy(), np.zeros(kp.dim), 0.0
    L = np.linalg.cholesky(Kj)
    ld = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    Kinv = np.linalg.inv(Kj)
    Kinv = np.where(mask[:, :, None] & mask[:, None, :], Kinv, 0.0)
    alpha = np.einsum("bij,bj->bi", Kinv, mS)
    dK = np.diagonal(Kinv, axis1=1, axis2=2)
    kl = 0.5 * (np.sum(np.where(mask, sS * dK + mS * alpha - np.log(sS), 0.0), axis=1)
                + ld - cnt)
    if not need_grad:
        return kl, None, None, None, None
    wt = wts[:, None]
    gm = np.where(mask, wt * alpha, 0.0)
    gs = np.where(mask, wt * 0.5 * (dK - 1.0 / sS), 0.0)
    KS = np.einsum("bik,bk,bkj->bij", Kinv, sS, Kinv)
    G = 0.5 * wts[:, None, None] * (Kinv - KS - alpha[:, :, None] * alpha[:, None, :])
    eye = np.eye(W, dtype=bool)[None]
    offd = np.where(~eye, G, 0.0)
    g_ls, g_os = _pair_vjp_np(kp, Zn[:, :, None, :], Zn[:, None, :, :], offd)
    diag_scale = 1.0 + jit / os_
    g_os += float(np.sum(np.diagonal(G, axis1=1, axis2=2).sum(axis=1) * diag_scale))
    return kl, gm, gs, g_ls, g_os


# -- dispatch ------------------------------------------------------------------

def _prep(kp, Z, T, nbr, cnt):
    return (np.ascontiguousarray(Z, dtype=float), np.ascontiguousarray(T, dtype=float),
            np.ascontiguousarray(nbr, dtype=np.int64), np.ascontiguousarray(cnt, dtype=np.int64))


def conditional(kp: KernelParams, Z, T, nbr, cnt) -> CondCache:
    """Weights b = K_nn^{-1} k_n and variances f = k_tt - k_n^T b per target."""
    Z, T, nbr, cnt = _prep(kp, Z, T, nbr, cnt)
    if not _accel.USE_NUMBA:
        return cond_forward_np(kp, Z, T, nbr, cnt)
    nb, W = nbr.shape
    fac = np.empty((nb, W, W))
    b = np.zeros((nb, W))
    f = np.empty(nb)
    jit = np.zeros(nb)
    bad = cond_forward_nb(Z, T, nbr, cnt, kind_code(kp.kind), kp.lengthscales,
                          kp.outputscale, _LADDER, fac, b, f, jit)
    if bad >= 0:
        raise NumericalError(
            f"Cholesky failed for a {cnt[bad]}x{cnt[bad]} neighbor block (term {bad}) "
            f"at max jitter {_LADDER[-1] * kp.outputscale:g}")
    return CondCache(fac, b, f, jit, True)


def conditional_vjp(kp: KernelParams, Z, T, nbr, cnt, cache: CondCache, gB, gF):
    """Pull d(objective)/db and d(objective)/df back to (lengthscales, outputscale)."""
    Z, T, nbr, cnt = _prep(kp, Z, T, nbr, cnt)
    gB = np.ascontiguousarray(gB, dtype=float)
    gF = np.ascontiguousarray(gF, dtype=float)
    if not cache.numba:
        return cond_backward_np(kp, Z, T, nbr, cnt, cache, gB, gF)
    g_ls = np.zeros(kp.dim)
    g_os = cond_backward_nb(Z, T, nbr, cnt, kind_code(kp.kind), kp.lengthscales,
                            kp.outputscale, cache.fac, cache.b, cache.jitter, gB, gF, g_ls)
    return g_ls, float(g_os)


def subset_kl(kp: KernelParams, Z, nbr, cnt, mS, sS, wts=None, need_grad=True):
    """Per-row KL(q(u_S) || p(u_S)) for mean-field q restricted to each row S.

    With ``need_grad`` also returns the gradients of ``sum(wts * kl)`` with
    respect to the gathered means, variances and constrained kernel params.
    """
    Z = np.ascontiguousarray(Z, dtype=float)
    nbr = np.ascontiguousarray(nbr, dtype=np.int64)
    cnt = np.ascontiguousarray(cnt, dtype=np.int64)
    nb, W = nbr.shape
    wts = np.ones(nb) if wts is None else np.ascontiguousarray(wts, dtype=float)
    mask = np.arange(W)[None, :] < cnt[:, None]
    mS = np.ascontiguousarray(np.where(mask, mS, 0.0), dtype=float)
    sS = np.ascontiguousarray(np.where(mask, sS, 1.0), dtype=float)
    if not _accel.USE_NUMBA:
        return subset_kl_np(kp, Z, nbr, cnt, mS, sS, wts, need_grad)
    kl = np.zeros(nb)
    gm = np.zeros((nb, W))
    gs = np.zeros((nb, W))
    g_ls = np.zeros(kp.dim)
    bad, g_os = subset_kl_nb(Z, nbr, cnt, kind_code(kp.kind), kp.lengthscales,
                             kp.outputscale, _LADDER, mS, sS, wts, need_grad,
                             kl, gm, gs, g_ls)
    if bad >= 0:
        raise NumericalError(
            f"Cholesky failed for a {cnt[bad]}x{cnt[bad]} neighbor block (term {bad}) "
            f"at max jitter {_LADDER[-1] * kp.outputscale:g}")
    if not need_grad:
        return kl, None, None, None, None
    return kl, gm, gs, g_ls, float(g_os)
