"""Adam-driven ELBO ascent with epoch-wise minibatching."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError, NumericalError

VARIATIONAL = ("m", "raw_s", "raw_chol")


@dataclass
class TrainConfig:
    iterations: int = 1000
    lr: float = 0.01
    batch_data: int = 256
    batch_ip: int = 256
    milestones: tuple = (0.75, 0.90)
    decay: float = 0.1
    seed: int = 0
    gradient_clip: Optional[float] = None
    train_hypers: bool = True
    smooth_window: int = 100

    def __post_init__(self):
        self.milestones = tuple(float(x) for x in self.milestones)
        if self.iterations < 0:
            raise ArgumentError("iterations must be nonnegative")
        if not self.lr > 0:
            raise ArgumentError("learning rate must be positive")
        if self.batch_data < 1 or self.batch_ip < 1:
            raise ArgumentError("batch sizes must be positive")
        ms = self.milestones
        if any(not 0 < x < 1 for x in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ArgumentError("milestones must be strictly increasing in (0, 1)")
        if self.gradient_clip is not None and not self.gradient_clip > 0:
            raise ArgumentError("gradient_clip must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = cls.__dataclass_fields__
        unknown = set(d) - set(names)
        if unknown:
            raise ArgumentError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        return d


class ParamVector:
    """Flat view over a subset of a model's named parameter arrays."""

    def __init__(self, params: dict, names: Optional[Sequence[str]] = None):
        names = list(params) if names is None else [n for n in names if n in params]
        self.names = names
        self.shapes = {n: np.shape(params[n]) for n in names}
        self.slices = {}
        off = 0
        for n in names:
            size = int(np.prod(self.shapes[n], dtype=np.int64))
            self.slices[n] = slice(off, off + size)
            off += size
        self.size = off

    def flatten(self, params: dict) -> np.ndarray:
        out = np.empty(self.size)
        for n in self.names:
            out[self.slices[n]] = np.ravel(params[n])
        return out

    def unflatten(self, vec) -> dict:
        vec = np.asarray(vec, dtype=float)
        return {n: vec[self.slices[n]].reshape(self.shapes[n]).copy() for n in self.names}

    def name_of(self, i: int) -> str:
        for n, s in self.slices.items():
            if s.start <= i < s.stop:
                return f"{n}[{i - s.start}]"
        raise IndexError(i)


def trainable_names(model, train_hypers: bool = True):
    names = list(model.params())
    return names if train_hypers else [n for n in names if n in VARIATIONAL]


class Adam:
    def __init__(self, size: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, theta, grad, lr):
        """One descent step on a loss with gradient ``grad``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        return theta - lr * mhat / (np.sqrt(vhat) + self.eps)


def adam_step(state: Adam, theta, grad, lr):
    return state.step(theta, grad, lr)


def lr_at(cfg: TrainConfig, it: int) -> float:
    passed = sum(it >= math.floor(f * cfg.iterations) for f in cfg.milestones)
    return cfg.lr * cfg.decay ** passed


class EpochSampler:
    """Batches of a fresh permutation each epoch; the last batch may be short."""

    def __init__(self, n: int, batch: int, rng: np.random.Generator):
        self.n = n
        self.batch = min(batch, n)
        self.rng = rng
        self.perm = np.empty(0, dtype=np.int64)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos >= self.perm.size:
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
        out = self.perm[self.pos: self.pos + self.batch]
        self.pos += self.batch
        return np.sort(out)


def gradient(model, X, y, pv: ParamVector, data_batch=None, ip_batch=None):
    """(loss, gradient) of -ELBO with respect to the flat parameters in ``pv``."""
    elbo, g = model.objective(X, y, data_batch, ip_batch)
    grad = -pv.flatten(g)
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NumericalError(f"non-finite gradient for {pv.name_of(int(bad[0]))}")
    return -elbo.total, grad


def fd_gradient(model, X, y, pv: ParamVector, step=1e-5, data_batch=None, ip_batch=None):
    """Central differences of the ELBO over every coordinate of ``pv``."""
    base = model.params()
    theta = pv.flatten(base)
    out = np.empty(theta.size)
    try:
        for i in range(theta.size):
            vals = []
            for h in (step, -step):
                t = theta.copy()
                t[i] += h
                model.set_params(pv.unflatten(t))
                vals.append(model.objective(X, y, data_batch, ip_batch, need_grad=False)[0].total)
            out[i] = (vals[0] - vals[1]) / (2 * step)
    finally:
        model.set_params(base)
    return out


@dataclass
class TrainResult:
    model: object
    trace: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.trace[-1][2] if self.trace else float("nan")


class TrainingAborted(NumericalError):
    def __init__(self, msg, iteration, last_params):
        super().__init__(msg)
        self.iteration = iteration
        self.last_params = last_params


def train(model, X, y, cfg: TrainConfig, names: Optional[Sequence[str]] = None) -> TrainResult:
    """Stochastic ELBO ascent; returns the model and the loss trace rows."""
    y = np.asarray(y, dtype=float)
    N = y.size
    if N:
        model.attach_data(X)
    names = trainable_names(model, cfg.train_hypers) if names is None else names
    pv = ParamVector(model.params(), names)
    theta = pv.flatten(model.params())
    opt = Adam(pv.size)
    rng = np.random.default_rng(cfg.seed)
    data_rng, ip_rng = rng.spawn(2)
    ds = EpochSampler(max(N, 1), cfg.batch_data, data_rng)
    ips = EpochSampler(model.M, cfg.batch_ip, ip_rng)
    window = []
    trace = []
    good = theta
    for it in range(cfg.iterations):
        lr = lr_at(cfg, it)
        db = ds.next() if N else np.zeros(0, dtype=np.int64)
        ib = ips.next()
        try:
            loss, grad = gradient(model, X, y, pv, db, ib)
            if not np.isfinite(loss):
                raise NumericalError(f"loss is {loss}")
        except NumericalError as exc:
            model.set_params(pv.unflatten(good))
            raise TrainingAborted(f"iteration {it}: {exc}", it, pv.unflatten(good)) from exc
        good = theta
        if cfg.gradient_clip is not None:
            norm = float(np.linalg.norm(grad))
            if norm > cfg.gradient_clip:
                grad = grad * (cfg.gradient_clip / norm)
        window.append(loss)
        if len(window) > cfg.smooth_window:
            window.pop(0)
        trace.append((it, loss, float(np.mean(window)), lr))
        theta = opt.step(theta, grad, lr)
        model.set_params(pv.unflatten(theta))
    return TrainResult(model, trace)


TRACE_COLUMNS = ("iteration", "raw_loss", "smoothed_loss", "lr")


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for it, raw, sm, lr in trace:
            w.writerow([it, format(raw, ".17g"), format(sm, ".17g"), format(lr, ".17g")])
