"""The discriminative BT objective, its KL decomposition, and Adam training with lr selection."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, xlogy

from .core import Cprd, ItemSet, TabularTripletDistribution, TripletDataset, comparison_distribution, \
    cprd_from_counts, cprd_from_distribution
from .errors import TrainingDivergedError
from .scorers import ScoreModel, forward, init_model, project_mean_zero, table_vjp

LN2 = math.log(2.0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rates: tuple = (1e-4, 1e-3, 1e-2)
    batch_size: int | None = 256  # None trains full-batch
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    validation_size: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rates or any(lr <= 0 for lr in self.learning_rates):
            raise ValueError("learning rates must be positive")
        object.__setattr__(self, "learning_rates", tuple(float(lr) for lr in self.learning_rates))

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


@dataclass
class TrainResult:
    model: ScoreModel
    selected_lr: float
    loss_history: np.ndarray  # (epochs, 2): train loss, validation loss
    final_validation_loss: float
    final_losses_by_lr: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "model": self.model.to_json(),
            "selected_lr": self.selected_lr,
            "final_validation_loss": self.final_validation_loss,
            "final_losses_by_lr": {repr(k): v for k, v in self.final_losses_by_lr.items()},
            "loss_history": self.loss_history.tolist(),
        }

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for epoch, (tr, va) in enumerate(self.loss_history, start=1):
                w.writerow([epoch, repr(float(tr)), repr(float(va))])


@dataclass(frozen=True)
class KLDecomposition:
    C: float
    Z: float
    expected_kl: float
    reconstructed: float


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _margins(table: np.ndarray, data: TripletDataset) -> np.ndarray:
    return table[data.contexts, data.pos] - table[data.contexts, data.neg]


def nll_from_table(table: np.ndarray, ctx, pos, neg) -> float:
    delta = table[ctx, pos] - table[ctx, neg]
    return float(np.mean(np.logaddexp(0.0, -delta)))


def bt_empirical_loss(model: ScoreModel, items: ItemSet | None, data: TripletDataset) -> float:
    """Mean negative log-likelihood -(1/n) sum log sigma(r(x, y+) - r(x, y-))."""
    table = model.score_table(items)
    return float(np.mean(np.logaddexp(0.0, -_margins(table, data))))


def _pairwise_delta(table: np.ndarray) -> np.ndarray:
    return table[:, :, None] - table[:, None, :]


def bt_population_loss(model: ScoreModel, items: ItemSet | None, dist: TabularTripletDistribution) -> float:
    delta = _pairwise_delta(model.score_table(items))
    return float(np.sum(dist.joint() * np.logaddexp(0.0, -delta)))


def population_grad_table(table: np.ndarray, dist: TabularTripletDistribution) -> np.ndarray:
    """d(population loss)/d(score table)."""
    a = -dist.joint() * expit(-_pairwise_delta(table))
    return a.sum(axis=2) - a.sum(axis=1)


def kl_decomposition(dist: TabularTripletDistribution, model: ScoreModel,
                     items: ItemSet | None = None) -> KLDecomposition:
    """Split the population loss into a model-free constant plus Z times the expected Bernoulli KL."""
    joint = dist.joint()
    diag_term = LN2 * float(np.einsum("kii->", joint))
    cd = comparison_distribution(dist)
    cprd = cprd_from_distribution(dist)
    iu = np.triu_indices(dist.m, k=1)
    w = cd.weights[:, iu[0], iu[1]]
    om = cprd.omega[:, iu[0], iu[1]]
    delta = _pairwise_delta(model.score_table(items))[:, iu[0], iu[1]]
    log_q = -np.logaddexp(0.0, -delta)
    log_1q = -np.logaddexp(0.0, delta)
    entropy = -(xlogy(om, om) + xlogy(1 - om, 1 - om))
    kl = xlogy(om, om) - om * log_q + xlogy(1 - om, 1 - om) - (1 - om) * log_1q
    c = diag_term + cd.normalizer * float(np.sum(w * entropy))
    ekl = float(np.sum(w * kl))
    return KLDecomposition(c, cd.normalizer, ekl, c + cd.normalizer * ekl)


def fit_population_gd(dist: TabularTripletDistribution, model: ScoreModel, items: ItemSet | None = None,
                      steps: int = 20000, lr: float | None = None, tol: float = 1e-13) -> ScoreModel:
    """Full-batch gradient descent on the exact population loss.

    The default step is 1/L with L = max weighted degree / 2, a bound on the
    Hessian of the loss in the score table.
    """
    if lr is None:
        mass = dist.joint() + dist.joint().transpose(0, 2, 1)
        lr = 2.0 / float(mass.sum(axis=2).max())
    for _ in range(steps):
        table, cache = forward(model, items)
        g = table_vjp(model, cache, population_grad_table(table, dist))
        if float(np.max(np.abs(g))) < tol:
            break
        model = project_mean_zero(model.with_params(model.params - lr * g))
    return model


def _batch_grad(model: ScoreModel, items, ctx, pos, neg):
    table, cache = forward(model, items)
    delta = table[ctx, pos] - table[ctx, neg]
    loss = float(np.mean(np.logaddexp(0.0, -delta)))
    coef = -expit(-delta) / delta.size
    k, m = table.shape
    size = k * m
    g = np.bincount(ctx * m + pos, weights=coef, minlength=size) - np.bincount(ctx * m + neg, weights=coef,
                                                                               minlength=size)
    return loss, table_vjp(model, cache, g.reshape(k, m))


def default_dims(kind: str, items: ItemSet | None, hidden: int = 32, embed: int = 8) -> dict:
    if kind == "cosine_mlp":
        return {"d": items.d, "hidden": hidden, "embed": embed}
    if kind == "tabular":
        return {"n_contexts": items.m, "m": items.m}
    raise ValueError("linear models need explicit features; pass an initial model")


def _run_one_rate(model, items, train, val, config, lr, rng):
    opt = Adam(lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    n = len(train)
    bs = n if config.batch_size is None else min(config.batch_size, n)
    ctx, pos, neg = train.contexts, train.pos, train.neg
    history = np.empty((config.epochs, 2))
    params = model.params.copy()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            b = order[start:start + bs]
            _, g = _batch_grad(model, items, ctx[b], pos[b], neg[b])
            params = opt.step(params, g)
            if not np.all(np.isfinite(params)):
                return None, history[:epoch]
            model = project_mean_zero(model.with_params(params))
            params = model.params.copy()
        table = model.score_table(items)
        history[epoch] = (nll_from_table(table, ctx, pos, neg),
                          nll_from_table(table, val.contexts, val.pos, val.neg))
        if not np.all(np.isfinite(history[epoch])):
            return None, history[:epoch + 1]
    return model, history


def train_bt(kind: str, items: ItemSet | None, train_data: TripletDataset, val_data: TripletDataset,
             config: TrainConfig = TrainConfig(), init: ScoreModel | None = None,
             hidden: int = 32, embed: int = 8) -> TrainResult:
    """Adam on the mean BT NLL for each learning rate; keep the lowest final validation loss.

    Every rate starts from the same initial model (seeded by ``config.seed``)
    and shuffles with its own stream derived from (seed, rate index).
    """
    if init is None:
        init = init_model(kind, default_dims(kind, items, hidden, embed), config.seed)
    best = None
    finals = {}
    for idx, lr in enumerate(config.learning_rates):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, idx]))
        with np.errstate(over="ignore", invalid="ignore"):
            model, history = _run_one_rate(init, items, train_data, val_data, config, lr, rng)
        if model is None:
            finals[lr] = float("nan")
            continue
        final_val = float(history[-1, 1])
        finals[lr] = final_val
        if best is None or final_val < best.final_validation_loss:
            best = TrainResult(model, lr, history, final_val)
    if best is None:
        raise TrainingDivergedError("training diverged for every learning rate")
    best.final_losses_by_lr = finals
    return best


def generative_recovered_cprd(data: TripletDataset, m: int) -> Cprd:
    """CPRD of the saturated tabular MLE, which is the empirical frequency table."""
    return cprd_from_counts(data, m)


def save_result(result: TrainResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_json()))


def config_dict(config: TrainConfig) -> dict:
    out = asdict(config)
    out["learning_rates"] = list(config.learning_rates)
    return out
