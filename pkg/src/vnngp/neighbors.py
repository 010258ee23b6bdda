"""Orderings and exact k-nearest-neighbor sets.

Inducing points live in *ordered positions*: position ``j`` holds the input
``Z[perm[j]]``. Inducing-side sets n(j) only draw from positions ``< j``;
data-side sets n(i) draw from every position. All sets are exact
(brute-force scan), tie-broken by the smaller position, and stored sorted
ascending in ``-1``-padded ``(rows, K)`` arrays with a count per row.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _accel
from ._accel import njit
from .errors import ArgumentError


@dataclass(frozen=True)
class Ordering:
    perm: np.ndarray
    scheme: str = "random"
    seed: Optional[int] = None
    dim: Optional[int] = None

    @classmethod
    def random(cls, M: int, seed: int) -> "Ordering":
        rng = np.random.default_rng(seed)
        return cls(rng.permutation(M).astype(np.int64), "random", seed=int(seed))

    @classmethod
    def coordinate(cls, Z, dim: int = 0) -> "Ordering":
        Z = _as_points(Z)
        perm = np.argsort(Z[:, dim], kind="stable").astype(np.int64)
        return cls(perm, "coordinate", dim=int(dim))

    @classmethod
    def identity(cls, M: int) -> "Ordering":
        return cls(np.arange(M, dtype=np.int64), "identity")

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ArgumentError("ordering is not a permutation")
        object.__setattr__(self, "perm", perm)

    def apply(self, Z):
        return _as_points(Z)[self.perm]

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "seed": self.seed, "dim": self.dim,
                "perm": self.perm.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Ordering":
        return cls(np.asarray(d["perm"], dtype=np.int64), d.get("scheme", "random"),
                   seed=d.get("seed"), dim=d.get("dim"))


@dataclass(frozen=True)
class NeighborSets:
    """``-1``-padded index rows; row r holds ``idx[r, :cnt[r]]``."""

    idx: np.ndarray
    cnt: np.ndarray

    def __len__(self):
        return self.idx.shape[0]

    def __getitem__(self, r) -> np.ndarray:
        return self.idx[r, : self.cnt[r]]

    @property
    def width(self) -> int:
        return self.idx.shape[1]

    def flat(self):
        """(flat indices, offsets) serialization; offsets has len(self)+1 entries."""
        offsets = np.concatenate([[0], np.cumsum(self.cnt)]).astype(np.int64)
        mask = np.arange(self.width)[None, :] < self.cnt[:, None]
        return self.idx[mask].astype(np.int64), offsets

    @classmethod
    def from_flat(cls, flat, offsets, width: Optional[int] = None) -> "NeighborSets":
        flat = np.asarray(flat, dtype=np.int64)
        offsets = np.asarray(offsets, dtype=np.int64)
        cnt = np.diff(offsets)
        width = int(cnt.max(initial=0)) if width is None else width
        idx = np.full((cnt.size, width), -1, dtype=np.int64)
        for r in range(cnt.size):
            idx[r, : cnt[r]] = flat[offsets[r]: offsets[r + 1]]
        return cls(idx, cnt.astype(np.int64))


@dataclass(frozen=True)
class NeighborIndex:
    K: int
    ordering: Ordering
    inducing_nn: NeighborSets
    data_nn: Optional[NeighborSets] = None

    def with_data(self, data_nn: NeighborSets) -> "NeighborIndex":
        return NeighborIndex(self.K, self.ordering, self.inducing_nn, data_nn)


def _as_points(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    return A


# -- brute force oracle -------------------------------------------------------

def brute_force_knn(query, candidates, K: int) -> np.ndarray:
    """Exact top-K candidates by squared Euclidean distance, ascending indices."""
    C = _as_points(candidates) if np.size(candidates) else np.zeros((0, 1))
    if C.shape[0] == 0 or K <= 0:
        return np.zeros(0, dtype=np.int64)
    q = np.atleast_1d(np.asarray(query, dtype=float))
    d = np.sum((C - q) ** 2, axis=1)
    order = np.argsort(d, kind="stable")[: min(K, C.shape[0])]
    return np.sort(order).astype(np.int64)


# -- compiled scan ------------------------------------------------------------

@njit(cache=True)
def _knn_scan_nb(Q, C, K, limits, out_idx, out_cnt):
    """For query r keep the K nearest of C[:limits[r]] (ties: smaller index)."""
    nq = Q.shape[0]
    D = Q.shape[1]
    bd = np.empty(K)
    bi = np.empty(K, dtype=np.int64)
    for r in range(nq):
        lim = limits[r]
        kk = min(K, lim)
        n = 0
        for c in range(lim):
            d = 0.0
            for t in range(D):
                diff = Q[r, t] - C[c, t]
                d += diff * diff
            if n < kk:
                p = n
                n += 1
            elif d < bd[kk - 1]:
                p = kk - 1
            else:
                continue
            while p > 0 and bd[p - 1] > d:
                bd[p] = bd[p - 1]
                bi[p] = bi[p - 1]
                p -= 1
            bd[p] = d
            bi[p] = c
        out_cnt[r] = n
        sel = np.sort(bi[:n])
        for t in range(n):
            out_idx[r, t] = sel[t]


def _knn_scan_np(Q, C, K, limits, out_idx, out_cnt, chunk_elems=4_000_000):
    nq, D = Q.shape
    nc = C.shape[0]
    rows = max(1, chunk_elems // max(1, nc * D))
    cols = np.arange(nc)
    for s in range(0, nq, rows):
        q = Q[s: s + rows]
        lim = limits[s: s + rows]
        d = np.sum((q[:, None, :] - C[None, :, :]) ** 2, axis=2)
        d[cols[None, :] >= lim[:, None]] = np.inf
        kk = min(K, nc)
        order = np.argsort(d, axis=1, kind="stable")[:, :kk]
        cnt = np.minimum(lim, K)
        valid = np.arange(kk)[None, :] < cnt[:, None]
        sel = np.where(valid, order, np.iinfo(np.int64).max)
        sel = np.sort(sel, axis=1)
        out_idx[s: s + rows, :kk] = np.where(valid, sel, -1)
        out_cnt[s: s + rows] = cnt


def _knn_scan(Q, C, K, limits) -> NeighborSets:
    Q = np.ascontiguousarray(Q, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    limits = np.ascontiguousarray(limits, dtype=np.int64)
    width = max(0, min(K, C.shape[0]))
    out_idx = np.full((Q.shape[0], width), -1, dtype=np.int64)
    out_cnt = np.zeros(Q.shape[0], dtype=np.int64)
    if width > 0 and Q.shape[0] > 0:
        if _accel.USE_NUMBA:
            _knn_scan_nb(Q, C, width, limits, out_idx, out_cnt)
        else:
            _knn_scan_np(Q, C, width, limits, out_idx, out_cnt)
    return NeighborSets(out_idx, out_cnt)


def build_inducing_nn(Z, ordering: Ordering, K: int) -> NeighborIndex:
    """Predecessor-constrained sets n(j) over ordered positions."""
    if K < 0:
        raise ArgumentError("K must be nonnegative")
    Zo = ordering.apply(Z)
    M = Zo.shape[0]
    if M < 1:
        raise ArgumentError("need at least one inducing point")
    sets = _knn_scan(Zo, Zo, K, np.arange(M))
    return NeighborIndex(int(K), ordering, sets)


def build_data_nn(X, Zo, K: int) -> NeighborSets:
    """Unconstrained sets n(i): the min(K, M) nearest ordered inducing positions."""
    X = _as_points(X)
    Zo = _as_points(Zo)
    if Zo.shape[0] < 1:
        raise ArgumentError("need at least one inducing point")
    if X.shape[0] and X.shape[1] != Zo.shape[1]:
        raise ArgumentError("data and inducing inputs differ in dimension")
    return _knn_scan(X, Zo, K, np.full(X.shape[0], Zo.shape[0]))
