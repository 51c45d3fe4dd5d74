"""Adam, plateau scheduling and the minibatch training loop."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument
from .model import Batch, NOModel, loss_and_grad, relative_l1_per_record, _batch_pred, _loss_weights


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict, lr: float | None = None) -> dict:
    """One bias-corrected Adam update; returns new parameter arrays."""
    lr = state.lr if lr is None else lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InvalidArgument(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


@dataclass
class PlateauScheduler:
    """Multiply lr by ``factor`` once val loss fails to improve for more than
    ``patience`` epochs (relative threshold, no cooldown)."""

    lr: float
    patience: int = 5
    factor: float = 0.5
    min_lr: float = 0.0
    threshold: float = 1e-4
    best: float = math.inf
    bad_epochs: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise InvalidArgument("plateau factor must lie in (0, 1)")
        if self.patience < 0 or self.lr <= 0 or self.min_lr < 0:
            raise InvalidArgument("bad scheduler settings")

    def step(self, val_loss: float) -> float:
        if val_loss < self.best * (1.0 - self.threshold):
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
        return self.lr


def plateau_scheduler(state: PlateauScheduler, val_loss: float) -> float:
    return state.step(val_loss)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    factor: float = 0.5
    min_lr: float = 1e-6
    seed: int = 0
    loss: str = "relative_l1"
    early_stop: int = 0  # epochs without val improvement before stopping; 0 disables
    chunk_size: int = 16  # records per gradient chunk; fixes the reduction order
    threads: int = 0  # 0 = serial reference mode

    def __post_init__(self):
        if not (self.lr > 0 and self.batch_size >= 1 and self.max_epochs >= 0 and self.chunk_size >= 1):
            raise InvalidArgument("learning rate, batch size, epochs and chunk size must be positive")
        if not 0 < self.factor < 1:
            raise InvalidArgument("factor must lie in (0, 1)")
        if self.loss != "relative_l1":
            raise InvalidArgument(f"unsupported loss {self.loss!r}")
        if self.early_stop < 0 or self.threads < 0 or self.patience < 0 or self.min_lr < 0:
            raise InvalidArgument("negative counts in train config")


@dataclass
class ArrayDataset:
    inputs: np.ndarray  # (N, nx, ny)
    targets: np.ndarray  # (N, nx, ny) or (N, nx)
    queries: np.ndarray | None = None

    def __len__(self):
        return self.inputs.shape[0]

    def batch(self, idx) -> Batch:
        q = None if self.queries is None else self.queries[idx]
        return Batch(self.inputs[idx], self.targets[idx], q)

    def subset(self, idx) -> "ArrayDataset":
        idx = np.asarray(idx)
        q = None if self.queries is None else self.queries[idx]
        return ArrayDataset(self.inputs[idx], self.targets[idx], q)


def _chunks(n: int, size: int):
    return [slice(a, min(a + size, n)) for a in range(0, n, size)]


def batch_grad(model: NOModel, batch: Batch, params, chunk_size: int, pool=None):
    """Mean-loss gradient summed chunk by chunk in a fixed order.

    The chunk layout depends only on ``chunk_size``, so any thread count
    gives bit-identical results.
    """
    B = batch.inputs.shape[0]
    parts = _chunks(B, chunk_size)

    def run(s):
        q = None if batch.queries is None else batch.queries[s]
        return loss_and_grad(model, Batch(batch.inputs[s], batch.targets[s], q), params, 1.0 / B)

    results = list(pool.map(run, parts)) if pool is not None else [run(s) for s in parts]
    loss, grads = results[0]
    grads = {k: v.copy() for k, v in grads.items()}
    for l, g in results[1:]:
        loss += l
        for k in grads:
            grads[k] += g[k]
    return loss, grads


@dataclass
class EvalStats:
    errors: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.errors))

    @property
    def max(self) -> float:
        return float(np.max(self.errors))

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))


def predict_dataset(model: NOModel, data: ArrayDataset, params=None, chunk_size: int = 64,
                    threads: int = 0) -> np.ndarray:
    def run(s):
        b = data.batch(s)
        out, _ = model.forward(b.inputs, b.queries, params)
        return _batch_pred(model, out, b)

    parts = _chunks(len(data), chunk_size)
    if threads:
        with ThreadPoolExecutor(threads) as pool:
            preds = list(pool.map(run, parts))
    else:
        preds = [run(s) for s in parts]
    return np.concatenate(preds)


def evaluate(model: NOModel, data: ArrayDataset, params=None, chunk_size: int = 64,
             threads: int = 0) -> EvalStats:
    pred = predict_dataset(model, data, params, chunk_size, threads)
    w = _loss_weights(model, data.batch(slice(0, 1)))
    return EvalStats(relative_l1_per_record(pred, data.targets, w))


@dataclass
class History:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def append(self, epoch, train_loss, val_loss, lr):
        self.epoch.append(epoch)
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.lr.append(lr)

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss,lr"]
        rows += [f"{e},{t!r},{v!r},{l!r}" for e, t, v, l in
                 zip(self.epoch, self.train_loss, self.val_loss, self.lr)]
        return "\n".join(rows) + "\n"


def train(config: TrainConfig, model: NOModel, train_set: ArrayDataset,
          val_set: ArrayDataset | None = None, log=None) -> tuple[NOModel, History]:
    """Shuffled minibatch Adam with per-epoch validation.

    Validation drives the plateau scheduler and best-checkpoint selection;
    without a validation set the training loss stands in for both.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
    params = {k: v.copy() for k, v in model.params.items()}
    adam = AdamState(config.lr)
    sched = PlateauScheduler(config.lr, config.patience, config.factor, config.min_lr)
    hist = History()
    best_params, best_val = params, math.inf
    since_best = 0
    n = len(train_set)
    pool = ThreadPoolExecutor(config.threads) if config.threads else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            for a in range(0, n, config.batch_size):
                idx = np.sort(order[a:a + config.batch_size])
                loss, grads = batch_grad(model, train_set.batch(idx), params, config.chunk_size, pool)
                total += loss * idx.size
                params = adam_step(adam, params, grads, sched.lr)
            train_loss = total / n
            if val_set is not None:
                val_loss = evaluate(model, val_set, params, threads=config.threads).mean
            else:
                val_loss = train_loss
            hist.append(epoch, train_loss, val_loss, sched.lr)
            if log is not None:
                log(f"epoch {epoch:3d}  train {train_loss:.5f}  val {val_loss:.5f}  lr {sched.lr:.2e}")
            if val_loss < best_val:
                best_val, best_params, since_best = val_loss, params, 0
            else:
                since_best += 1
            sched.step(val_loss)
            if config.early_stop and since_best >= config.early_stop:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return model.with_params(best_params), hist
