"""Score function classes: tabular, linear in features, and cosine similarity of MLP embeddings.

Every model evaluates to a full score table ``S[x, y]`` over the finite universe.
Training and the variational estimators only ever need gradients of a scalar
of the form ``sum(G * S)``, so each class exposes one vector-Jacobian product,
:func:`table_vjp`, and all other gradients are built from it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ItemSet

KINDS = ("tabular", "linear", "cosine_mlp")
COSINE_EPS = 1e-12


@dataclass(frozen=True)
class ScoreModel:
    kind: str
    params: np.ndarray
    dims: dict
    seed: int | None = None
    # linear kind only: (K, m, k) feature tensor phi(x, y)
    features: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        params = np.array(self.params, dtype=np.float64).ravel()
        if params.size != n_params(self.kind, self.dims):
            raise ValueError(f"{self.kind} with dims {self.dims} needs {n_params(self.kind, self.dims)} parameters")
        if not np.all(np.isfinite(params)):
            raise ValueError("parameters must be finite")
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        if self.features is not None:
            feats = np.array(self.features, dtype=np.float64)
            if feats.ndim != 3 or feats.shape[2] != self.dims["n_features"]:
                raise ValueError("features must be (K, m, n_features)")
            feats.setflags(write=False)
            object.__setattr__(self, "features", feats)

    def with_params(self, params) -> "ScoreModel":
        return ScoreModel(self.kind, params, self.dims, self.seed, self.features)

    def score_table(self, items: ItemSet | None = None) -> np.ndarray:
        return forward(self, items)[0]

    def to_json(self) -> dict:
        out = {"kind": self.kind, "dims": dict(self.dims), "seed": self.seed,
               "parameters": self.params.tolist()}
        if self.features is not None:
            out["features"] = self.features.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ScoreModel":
        feats = obj.get("features")
        return cls(obj["kind"], np.asarray(obj["parameters"]), dict(obj["dims"]), obj.get("seed"),
                   None if feats is None else np.asarray(feats))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "ScoreModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def n_params(kind: str, dims: dict) -> int:
    if kind == "tabular":
        return dims["n_contexts"] * dims["m"]
    if kind == "linear":
        return dims["n_features"]
    d, h, e = dims["d"], dims["hidden"], dims["embed"]
    return d * h + h + h * e + e


def _mlp_unpack(params: np.ndarray, dims: dict):
    d, h, e = dims["d"], dims["hidden"], dims["embed"]
    i = 0
    w1 = params[i:i + h * d].reshape(h, d); i += h * d
    b1 = params[i:i + h]; i += h
    w2 = params[i:i + e * h].reshape(e, h); i += e * h
    b2 = params[i:i + e]
    return w1, b1, w2, b2


def init_model(kind: str, dims: dict, seed: int, features=None) -> ScoreModel:
    """Tabular and linear models start at zero; MLP weights are N(0, 1/fan_in), biases zero."""
    if any(int(v) <= 0 for v in dims.values()):
        raise ValueError("dimensions must be positive")
    if kind != "cosine_mlp":
        return ScoreModel(kind, np.zeros(n_params(kind, dims)), dict(dims), seed, features)
    rng = np.random.default_rng(seed)
    d, h, e = dims["d"], dims["hidden"], dims["embed"]
    w1 = rng.standard_normal((h, d)) / np.sqrt(d)
    w2 = rng.standard_normal((e, h)) / np.sqrt(h)
    params = np.concatenate([w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(e)])
    return ScoreModel(kind, params, dict(dims), seed)


def concat_features(items: ItemSet) -> np.ndarray:
    """phi(x, y) = [x, y] for every (context, response) pair, shape (m, m, 2d)."""
    m = items.m
    xs = np.broadcast_to(items.items[:, None, :], (m, m, items.d))
    ys = np.broadcast_to(items.items[None, :, :], (m, m, items.d))
    return np.concatenate([xs, ys], axis=2)


def center_features(features: np.ndarray, q_y: np.ndarray) -> np.ndarray:
    """Subtract the per-context mean of phi under the response distribution ``q_y`` (K, m)."""
    q_y = np.asarray(q_y, dtype=np.float64)
    mean = np.einsum("km,kmf->kf", q_y, features)
    return features - mean[:, None, :]


def linear_model(features: np.ndarray, w=None, seed=None) -> ScoreModel:
    k = features.shape[2]
    w = np.zeros(k) if w is None else w
    return ScoreModel("linear", w, {"n_features": k}, seed, features)


def forward(model: ScoreModel, items: ItemSet | None = None):
    """Return (score table, cache) where the cache feeds :func:`table_vjp`."""
    p = model.params
    if model.kind == "tabular":
        return p.reshape(model.dims["n_contexts"], model.dims["m"]), None
    if model.kind == "linear":
        if model.features is None:
            raise ValueError("linear model has no feature tensor")
        return model.features @ p, None
    if items is None:
        raise ValueError("cosine_mlp scores need the item set")
    w1, b1, w2, b2 = _mlp_unpack(p, model.dims)
    x = items.items
    pre = x @ w1.T + b1
    hid = np.maximum(pre, 0.0)
    emb = hid @ w2.T + b2
    norms = np.linalg.norm(emb, axis=1)
    prod = np.outer(norms, norms)
    active = prod > COSINE_EPS
    denom = np.where(active, prod, COSINE_EPS)
    table = (emb @ emb.T) / denom
    return table, (x, pre, hid, emb, norms, active, denom, table)


def table_vjp(model: ScoreModel, cache, grad_table: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(grad_table * S)`` with respect to the flat parameters."""
    if model.kind == "tabular":
        return np.asarray(grad_table, dtype=np.float64).ravel().copy()
    if model.kind == "linear":
        return np.einsum("km,kmf->f", grad_table, model.features)
    x, pre, hid, emb, norms, active, denom, table = cache
    w1, b1, w2, b2 = _mlp_unpack(model.params, model.dims)
    sym = grad_table + grad_table.T
    inv_sq = np.divide(1.0, norms ** 2, out=np.zeros_like(norms), where=norms > 0)
    # d S_ij / d u_i = u_j / denom_ij - [active] S_ij u_i / |u_i|^2
    shrink = (sym * active * table).sum(axis=1) * inv_sq
    d_emb = (sym / denom) @ emb - shrink[:, None] * emb
    d_w2 = d_emb.T @ hid
    d_b2 = d_emb.sum(axis=0)
    d_pre = (d_emb @ w2) * (pre > 0)
    d_w1 = d_pre.T @ x
    d_b1 = d_pre.sum(axis=0)
    return np.concatenate([d_w1.ravel(), d_b1, d_w2.ravel(), d_b2])


def score(model: ScoreModel, items: ItemSet | None, x: int, y: int) -> float:
    return float(model.score_table(items)[x, y])


def pairwise_margin(model: ScoreModel, items: ItemSet | None, x: int, y: int, y_other: int) -> float:
    if y == y_other:
        raise ValueError("margin needs two distinct responses")
    table = model.score_table(items)
    return float(table[x, y] - table[x, y_other])


def score_gradient(model: ScoreModel, items: ItemSet | None, x: int, y_pos: int, y_neg: int) -> np.ndarray:
    """Gradient of r(x, y_pos) - r(x, y_neg) with respect to the flat parameters."""
    if y_pos == y_neg:
        raise ValueError("y_pos and y_neg must differ")
    table, cache = forward(model, items)
    g = np.zeros_like(table)
    g[x, y_pos] += 1.0
    g[x, y_neg] -= 1.0
    return table_vjp(model, cache, g)


def project_mean_zero(model: ScoreModel) -> ScoreModel:
    """Center each context block of a tabular model; margins are unchanged."""
    if model.kind != "tabular":
        return model
    t = model.params.reshape(model.dims["n_contexts"], model.dims["m"])
    return model.with_params(t - t.mean(axis=1, keepdims=True))


def tabular_from_table(table) -> ScoreModel:
    table = np.atleast_2d(np.asarray(table, dtype=np.float64))
    k, m = table.shape
    return ScoreModel("tabular", table.ravel(), {"n_contexts": k, "m": m})


def pre_activations(model: ScoreModel, items: ItemSet) -> np.ndarray:
    """Hidden-layer pre-activations of a cosine MLP on every item (for kink checks)."""
    w1, b1, _, _ = _mlp_unpack(model.params, model.dims)
    return items.items @ w1.T + b1
