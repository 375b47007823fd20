"""Connectivity degree of a triplet distribution with respect to a score class.

The connectivity degree is the infimum, over score pairs f, g in the class,
of ``E_P~[(Delta f - Delta g)^2] / Var~_Q[f - g]`` where P~ is the comparison
distribution. For the mean-zero tabular class with one context and uniform Q
it is ``m * lambda_2`` of the comparison-graph Laplacian; for a linear class
over Q-centered features it is a whitened smallest eigenvalue. Other classes
use a variational estimate: gradient descent on the log-ratio from several
random starts, keeping the smallest ratio reached.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import softmax

from .core import ItemSet, TabularTripletDistribution, comparison_distribution
from .design import bt_consistent_pair
from .errors import DegenerateClassError, RankDeficiencyError, UnsupportedSettingError
from .representability import product_distribution
from .scorers import ScoreModel, forward, init_model, table_vjp

DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class TestDistributionQ:
    """Evaluation distribution: a context marginal (K,) and response conditionals (K, m)."""

    __test__ = False  # keep pytest from collecting this class

    context_marginal: np.ndarray
    response_conditional: np.ndarray

    def __post_init__(self):
        qx = np.array(self.context_marginal, dtype=np.float64)
        qy = np.atleast_2d(np.array(self.response_conditional, dtype=np.float64))
        if qy.shape[0] != qx.shape[0]:
            raise ValueError("one response conditional per context")
        if np.any(qx < 0) or np.any(qy < 0) or abs(qx.sum() - 1) > 1e-9 \
                or not np.allclose(qy.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("Q must consist of probability vectors")
        object.__setattr__(self, "context_marginal", qx)
        object.__setattr__(self, "response_conditional", qy)

    @classmethod
    def uniform(cls, k: int, m: int) -> "TestDistributionQ":
        return cls(np.full(k, 1.0 / k), np.full((k, m), 1.0 / m))

    def pair_weights(self) -> np.ndarray:
        """Q_pair(x, y, y') as a (K, m, m) array over ordered pairs, diagonal included."""
        qy = self.response_conditional
        return self.context_marginal[:, None, None] * qy[:, :, None] * qy[:, None, :]


@dataclass(frozen=True)
class ConnEstimate:
    value: float
    method: str
    restarts_used: int = 0
    per_restart_values: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"method": self.method, "value": self.value, "restarts": self.restarts_used,
                "per_restart_values": list(self.per_restart_values)}


@dataclass(frozen=True)
class VariationalConfig:
    restarts: int = 8
    steps: int = 2000
    step_size: float = 1e-2
    seed: int = 0
    hidden: int = 32
    embed: int = 8
    max_attempts_factor: int = 4


@dataclass(frozen=True)
class GDAConfig:
    outer_steps: int = 100
    inner_steps: int = 100
    ascent_step: float = 2.0
    seed: int = 0
    variational: VariationalConfig = VariationalConfig()


def paired_variance(values, q: TestDistributionQ) -> float:
    """E_{x ~ Q_x} Var_{y ~ Q_y(.|x)} [values[x, y]]."""
    v = np.atleast_2d(np.asarray(values, dtype=np.float64))
    qy = q.response_conditional
    mean = (qy * v).sum(axis=1)
    var = (qy * (v - mean[:, None]) ** 2).sum(axis=1)
    return float(np.dot(q.context_marginal, var))


def laplacians(dist: TabularTripletDistribution) -> np.ndarray:
    """Per-context Laplacians of the comparison graph weighted by normalized P~."""
    adj = comparison_distribution(dist).symmetric()
    deg = adj.sum(axis=2)
    return np.einsum("ki,ij->kij", deg, np.eye(dist.m)) - adj


def pair_sq_diff_mean(values, lap: np.ndarray) -> float:
    """E_P~[(Delta v)^2] = sum_x v_x^T L_x v_x."""
    v = np.atleast_2d(np.asarray(values, dtype=np.float64))
    return float(np.einsum("ki,kij,kj->", v, lap, v))


def ratio(values, lap: np.ndarray, q: TestDistributionQ) -> float:
    return pair_sq_diff_mean(values, lap) / paired_variance(values, q)


def _single_context(dist: TabularTripletDistribution) -> TabularTripletDistribution:
    live = np.flatnonzero(dist.context_marginal > 0)
    if dist.n_contexts == 1:
        return dist
    if live.size == 1:
        return TabularTripletDistribution(np.ones(1), dist.tables[live])
    raise UnsupportedSettingError("the Fiedler formula covers a single context only; "
                                  "use variational_connectivity for several contexts")


def tabular_connectivity(dist: TabularTripletDistribution) -> ConnEstimate:
    """m times the Fiedler value of the comparison-graph Laplacian (uniform Q, mean-zero scores)."""
    dist = _single_context(dist)
    lap = laplacians(dist)[0]
    eig = np.linalg.eigvalsh(lap)
    return ConnEstimate(max(0.0, dist.m * float(eig[1])), "tabular_spectral")


def whitened_min_eigenvalue(sigma_p, sigma_q) -> float:
    """Smallest eigenvalue of Sigma_Q^{-1/2} Sigma_P Sigma_Q^{-1/2}."""
    evals, evecs = np.linalg.eigh(np.asarray(sigma_q, dtype=np.float64))
    if evals[0] <= 1e-12 * max(1.0, evals[-1]):
        raise RankDeficiencyError("Sigma_Q is singular", null_direction=evecs[:, 0])
    inv_sqrt = evecs @ np.diag(evals ** -0.5) @ evecs.T
    whitened = inv_sqrt @ np.asarray(sigma_p, dtype=np.float64) @ inv_sqrt
    return float(np.linalg.eigvalsh((whitened + whitened.T) / 2)[0])


def linear_connectivity(dist: TabularTripletDistribution, q: TestDistributionQ, features) -> ConnEstimate:
    """lambda_min(Sigma_Q^{-1/2} Sigma_P Sigma_Q^{-1/2}) for r = w . phi with Q-centered phi."""
    phi = np.asarray(features, dtype=np.float64)
    if phi.shape[:2] != (dist.n_contexts, dist.m):
        raise ValueError("features must be (K, m, k) matching the distribution")
    qy, qx = q.response_conditional, q.context_marginal
    mean = np.einsum("km,kmf->kf", qy, phi)
    if np.abs(mean).max() > 1e-9 * (1.0 + np.abs(phi).max()):
        raise ValueError("features are not centered under Q; apply scorers.center_features first")
    sigma_p = np.einsum("kif,kij,kjg->fg", phi, laplacians(dist), phi)
    sigma_q = np.einsum("k,km,kmf,kmg->fg", qx, qy, phi, phi)
    value = whitened_min_eigenvalue(sigma_p, sigma_q)
    return ConnEstimate(max(0.0, value), "linear_spectral")


class _ScorePair:
    """Two models of one class whose difference f - g drives the ratio."""

    def __init__(self, kind: str, dims: dict, items, features, rng):
        self.kind, self.items = kind, items
        self.models = []
        for child in rng.spawn(2):
            if kind == "cosine_mlp":
                seed = int(child.integers(2 ** 63))
                self.models.append(init_model(kind, dims, seed))
            else:
                size = dims["n_contexts"] * dims["m"] if kind == "tabular" else dims["n_features"]
                self.models.append(ScoreModel(kind, child.standard_normal(size), dims, None, features))

    def diff(self):
        (tf, cf), (tg, cg) = (forward(mod, self.items) for mod in self.models)
        return tf - tg, (cf, cg)

    def step(self, grad_table, caches, step_size):
        f, g = self.models
        gf = table_vjp(f, caches[0], grad_table)
        gg = -table_vjp(g, caches[1], grad_table)
        self.models = [f.with_params(f.params - step_size * gf), g.with_params(g.params - step_size * gg)]


def _log_ratio_grad(d: np.ndarray, lap: np.ndarray, q: TestDistributionQ):
    num = pair_sq_diff_mean(d, lap)
    qy = q.response_conditional
    centered = d - (qy * d).sum(axis=1, keepdims=True)
    den = float(np.dot(q.context_marginal, (qy * centered ** 2).sum(axis=1)))
    if den < DENOM_FLOOR or num <= 0:
        return num, den, None
    g_num = 2.0 * np.einsum("kij,kj->ki", lap, d)
    g_den = 2.0 * q.context_marginal[:, None] * qy * centered
    return num, den, g_num / num - g_den / den


def _class_dims(kind, dist, items, features, config):
    if kind == "tabular":
        return {"n_contexts": dist.n_contexts, "m": dist.m}
    if kind == "linear":
        if features is None:
            raise ValueError("linear class needs a feature tensor")
        return {"n_features": np.asarray(features).shape[2]}
    if kind == "cosine_mlp":
        if items is None:
            raise ValueError("cosine_mlp class needs the item set")
        return {"d": items.d, "hidden": config.hidden, "embed": config.embed}
    raise ValueError(f"unknown class kind {kind!r}")


def _descend(pair: _ScorePair, lap, q, steps, step_size):
    """Gradient descent on the log-ratio; returns the smallest ratio seen (inf if degenerate)."""
    best = np.inf
    for _ in range(steps):
        d, caches = pair.diff()
        num, den, g = _log_ratio_grad(d, lap, q)
        if g is None:
            if den >= DENOM_FLOOR:
                best = min(best, 0.0)
            break
        best = min(best, num / den)
        pair.step(g, caches, step_size)
    else:
        d, _ = pair.diff()
        num, den, _ = _log_ratio_grad(d, lap, q)
        if den >= DENOM_FLOOR:
            best = min(best, num / den)
    return best


def variational_connectivity(dist: TabularTripletDistribution, q: TestDistributionQ, class_kind: str,
                             config: VariationalConfig = VariationalConfig(), items: ItemSet | None = None,
                             features=None) -> ConnEstimate:
    """Minimum over restarts of the smallest ratio reached by gradient descent on (f, g).

    Every value returned is a ratio attained by some (f, g) in the class, so it
    upper-bounds the true infimum.
    """
    dims = _class_dims(class_kind, dist, items, features, config)
    lap = laplacians(dist)
    values = []
    for attempt in range(config.restarts * config.max_attempts_factor):
        if len(values) == config.restarts:
            break
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED, attempt]))
        pair = _ScorePair(class_kind, dims, items, features, rng)
        d, _ = pair.diff()
        if paired_variance(d, q) < DENOM_FLOOR:
            continue
        values.append(float(_descend(pair, lap, q, config.steps, config.step_size)))
    values = [v for v in values if np.isfinite(v)]
    if not values:
        raise DegenerateClassError("every restart had a vanishing denominator")
    return ConnEstimate(min(values), "variational", len(values), values)


def consistent_distribution(target_score, p_minus, context_marginal=None) -> TabularTripletDistribution:
    return product_distribution(bt_consistent_pair(target_score, p_minus, context_marginal))


def _softmax_vjp(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    return p * (v - (p * v).sum(axis=1, keepdims=True))


def negative_objective(logits, target_score, sq_diff, context_marginal):
    """log E_P~[(Delta d)^2] as a function of the negative-sampling logits, with its gradient.

    ``sq_diff[x, i, j] = (d[x, i] - d[x, j])^2`` for the current difference d = f - g.
    """
    a = context_marginal
    p_minus = softmax(logits, axis=1)
    p_plus = softmax(logits + target_score, axis=1)
    s_pm = np.einsum("kij,kj->ki", sq_diff, p_minus)
    s_pp = np.einsum("kij,ki->kj", sq_diff, p_plus)
    num = float(np.dot(a, (p_plus * s_pm).sum(axis=1)))
    z = float(np.dot(a, 1.0 - (p_plus * p_minus).sum(axis=1)))
    g_plus = a[:, None] * (s_pm / num + p_minus / z)
    g_minus = a[:, None] * (s_pp / num + p_plus / z)
    grad = _softmax_vjp(p_plus, g_plus) + _softmax_vjp(p_minus, g_minus)
    return np.log(num) - np.log(z), grad


@dataclass
class NegativeOptResult:
    p_minus: np.ndarray
    achieved: ConnEstimate
    baseline: ConnEstimate
    improved: bool
    outer_steps_done: int

    def to_json(self) -> dict:
        return {"p_minus": self.p_minus.tolist(), "achieved": self.achieved.to_json(),
                "baseline": self.baseline.to_json(), "improved": self.improved,
                "outer_steps_done": self.outer_steps_done}


def optimize_negative_for_connectivity(target_score, q: TestDistributionQ, class_kind: str,
                                       config: GDAConfig = GDAConfig(), items: ItemSet | None = None,
                                       features=None, context_marginal=None) -> NegativeOptResult:
    """Alternating descent on (f, g) and ascent on softmax logits of p-.

    (f, g) are warm-started across outer iterations. The final p- is scored by
    a fresh variational estimate; the uniform start is scored with the same
    restart seeds, and if it scores higher it is returned instead.
    """
    r = np.atleast_2d(np.asarray(target_score, dtype=np.float64))
    k, m = r.shape
    a = np.full(k, 1.0 / k) if context_marginal is None else np.asarray(context_marginal, dtype=np.float64)
    uniform = np.full((k, m), 1.0 / m)
    logits = np.zeros((k, m))
    vcfg = config.variational
    dims = _class_dims(class_kind, consistent_distribution(r, uniform, a), items, features, vcfg)
    pair = _ScorePair(class_kind, dims, items, features,
                      np.random.default_rng(np.random.SeedSequence([config.seed, 0x6DA])))
    done = 0
    for _ in range(config.outer_steps):
        lap = laplacians(consistent_distribution(r, softmax(logits, axis=1), a))
        for _ in range(config.inner_steps):
            d, caches = pair.diff()
            _, _, g = _log_ratio_grad(d, lap, q)
            if g is None:
                break
            pair.step(g, caches, vcfg.step_size)
        d, _ = pair.diff()
        sq = (d[:, :, None] - d[:, None, :]) ** 2
        _, grad = negative_objective(logits, r, sq, a)
        new_logits = logits + config.ascent_step * grad
        if not np.all(np.isfinite(new_logits)):
            break
        logits = new_logits
        done += 1
    p_minus = softmax(logits, axis=1)
    estimate = replace(vcfg, seed=vcfg.seed + 1)
    achieved = variational_connectivity(consistent_distribution(r, p_minus, a), q, class_kind, estimate,
                                        items, features)
    baseline = variational_connectivity(consistent_distribution(r, uniform, a), q, class_kind, estimate,
                                        items, features)
    if achieved.value < baseline.value:
        return NegativeOptResult(uniform, baseline, baseline, False, done)
    return NegativeOptResult(p_minus, achieved, baseline, True, done)
