"""Dataset ingestion, splits, standardization and synthetic GP draws."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import smallmat
from .errors import ArgumentError, IngestionError
from .kernel import KernelParams, cross_matrix


@dataclass
class Standardizer:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @classmethod
    def fit(cls, X, y=None, scale_y: bool = True) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        # constant columns stay centered with a unit sentinel
        sd = np.where(sd > 0, sd, 1.0)
        ym, ys = 0.0, 1.0
        if y is not None and scale_y:
            ym = float(np.mean(y))
            ys = float(np.std(y)) or 1.0
        return cls(mu, sd, ym, ys)

    def transform_x(self, X):
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def transform_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def inverse_y(self, y):
        return np.asarray(y, dtype=float) * self.y_std + self.y_mean

    def inverse_moments(self, mean, var):
        return self.inverse_y(mean), np.asarray(var, dtype=float) * self.y_std ** 2

    def to_dict(self) -> dict:
        return {"x_mean": [format(v, ".17g") for v in self.x_mean],
                "x_std": [format(v, ".17g") for v in self.x_std],
                "y_mean": format(self.y_mean, ".17g"), "y_std": format(self.y_std, ".17g")}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.array([float(v) for v in d["x_mean"]]), np.array([float(v) for v in d["x_std"]]),
                   float(d["y_mean"]), float(d["y_std"]))


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list = field(default_factory=list)
    task: str = "regression"
    dropped: int = 0
    standardizer: Optional[Standardizer] = None

    def __len__(self):
        return self.y.size

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx], dropped=0)


def _parse(value: str, row: int, col: str) -> float:
    v = value.strip()
    if v == "" or v.lower() in ("nan", "na"):
        return math.nan
    try:
        return float(v)
    except ValueError:
        raise IngestionError(f"row {row}, column {col!r}: cannot parse {value!r}") from None


def load_csv(path, target_column: str, task: str = "regression",
             require_target: bool = True) -> Dataset:
    """Read a headered CSV; rows with missing values are dropped and counted.

    ``task`` is ``regression`` or ``classification``; classification labels
    {0, 1} map to {-1, +1}. With ``require_target=False`` a file lacking the
    target column is read as features only and ``y`` is all NaN.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header and require_target:
            raise IngestionError(f"{path}: no target column {target_column!r}")
        t = header.index(target_column) if target_column in header else None
        rows = []
        for r, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise IngestionError(f"row {r}: expected {len(header)} fields, got {len(rec)}")
            rows.append([_parse(v, r, header[c]) for c, v in enumerate(rec)])
    A = np.array(rows, dtype=float).reshape(-1, len(header))
    keep = np.all(np.isfinite(A), axis=1)
    A = A[keep]
    names = [h for i, h in enumerate(header) if i != t]
    if t is None:
        return Dataset(A, np.full(A.shape[0], np.nan), names, task, int((~keep).sum()))
    X = np.delete(A, t, axis=1)
    y = A[:, t]
    if task in ("classification", "bernoulli"):
        labels = set(np.unique(y).tolist())
        if labels <= {0.0, 1.0}:
            y = 2.0 * y - 1.0
        elif not labels <= {-1.0, 1.0}:
            bad = sorted(labels - {0.0, 1.0, -1.0})
            raise IngestionError(f"classification labels must be 0/1 or -1/+1; found {len(bad)} "
                                 f"other values, e.g. {bad[:3]}")
        task = "classification"
    return Dataset(X, y, names, task, int((~keep).sum()))


def split_sizes(n: int):
    if n < 5:
        raise ArgumentError("need at least 5 rows to split")
    # floor each share but keep validation and test nonempty; the rest trains
    va = max(1, math.floor(0.16 * n))
    te = max(1, math.floor(0.20 * n))
    return n - va - te, va, te


def split(ds: Dataset, seed: int, standardize: bool = True):
    """Random 64/16/20 split; standardization is fit on the training part."""
    n_tr, n_va, _ = split_sizes(len(ds))
    perm = np.random.default_rng(seed).permutation(len(ds))
    parts = [ds.subset(np.sort(p)) for p in
             (perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:])]
    if not standardize:
        return tuple(parts)
    st = Standardizer.fit(parts[0].X, parts[0].y, scale_y=ds.task == "regression")
    out = []
    for p in parts:
        y = st.transform_y(p.y) if ds.task == "regression" else p.y
        out.append(replace(p, X=st.transform_x(p.X), y=y, standardizer=st))
    return tuple(out)


def sample_gp(kp: Optional[KernelParams], noise: float, X, seed: int, return_f: bool = False):
    """y = L xi + sqrt(noise) eps with L the Cholesky factor of K(X, X).

    ``kp=None`` stands for a zero outputscale: f = 0 and y is pure noise.
    """
    if noise < 0:
        raise ArgumentError("noise variance must be nonnegative")
    X = np.asarray(X, dtype=float)
    if X.ndim < 2:
        X = X.reshape(-1, 1 if kp is None else kp.dim)
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    xi = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    if kp is None:
        f = np.zeros(n)
    else:
        F = smallmat.chol_jittered(cross_matrix(kp, X, X), scale=kp.outputscale)
        f = F.L @ xi
    y = f + math.sqrt(noise) * eps
    return (y, f) if return_f else y


def fig4_inputs(seed: int = 0, n_cluster: int = 22, n_between: int = 6):
    """Two dense clusters near 0 and 50 with a few scattered points between."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-4.0, 4.0, n_cluster)
    b = rng.uniform(46.0, 54.0, n_cluster)
    c = rng.uniform(8.0, 42.0, n_between)
    return np.sort(np.concatenate([a, b, c]))[:, None]
