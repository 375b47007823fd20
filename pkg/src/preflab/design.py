"""Building triplet distributions whose CPRD realizes a chosen target score, and sampling them."""
from __future__ import annotations

import numpy as np
from scipy.special import softmax

from .core import TripletDataset
from .errors import RejectionSamplingError, ScoreRangeError
from .representability import ConditionalPair

EXP_LIMIT = 700.0


def uniform_negative(k: int, m: int) -> np.ndarray:
    return np.full((k, m), 1.0 / m)


def bt_consistent_pair(target_score, p_minus, context_marginal=None) -> ConditionalPair:
    """p+ proportional to exp(r*) * p-, renormalized in each context.

    The renormalization shifts log(p+/p-) by a per-context constant, so every
    margin, and hence the CPRD, equals that of r*.
    """
    r = np.atleast_2d(np.asarray(target_score, dtype=np.float64))
    pm = np.broadcast_to(np.asarray(p_minus, dtype=np.float64), r.shape)
    if np.any(np.abs(r) > EXP_LIMIT):
        raise ScoreRangeError("target scores exceed the safe exponent range")
    if np.any(pm < 0):
        raise ValueError("p_minus must be nonnegative")
    w = pm * np.exp(r - r.max(axis=1, keepdims=True))
    p_plus = w / w.sum(axis=1, keepdims=True)
    k = r.shape[0]
    if context_marginal is None:
        context_marginal = np.full(k, 1.0 / k)
    return ConditionalPair(p_plus, pm / pm.sum(axis=1, keepdims=True), context_marginal)


def alpha_negative(target_score, alpha: float) -> np.ndarray:
    """p-(y|x) proportional to exp(alpha * r*(x, y)): alpha < 0 easy, alpha > 0 hard negatives."""
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    r = np.atleast_2d(np.asarray(target_score, dtype=np.float64))
    return softmax(alpha * r, axis=1)


def rank_normalize(score_table) -> np.ndarray:
    """Replace scores by -1 + 2 * rank / m, ranks 1..m ascending; ties go to the lower index first."""
    r = np.atleast_2d(np.asarray(score_table, dtype=np.float64))
    m = r.shape[1]
    order = np.argsort(r, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, m + 1)[None, :].repeat(r.shape[0], 0), axis=1)
    return -1.0 + 2.0 * ranks / m


def scale_score(target_score, beta: float) -> np.ndarray:
    if not np.isfinite(beta):
        raise ValueError("beta must be finite")
    return beta * np.asarray(target_score, dtype=np.float64)


def sample_triplets(pair: ConditionalPair, n: int, seed: int, item_set_ref: str = "") -> TripletDataset:
    """Draw x, then (y+, y-) from p+ x p- conditioned on y+ != y-.

    Conditioning is done exactly by zeroing the diagonal of the product table
    and renormalizing, which is the law of redrawing the pair until it is
    distinct, without an iteration cap.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    k, m = pair.p_plus.shape
    cells = pair.p_plus[:, :, None] * pair.p_minus[:, None, :]
    cells[:, np.arange(m), np.arange(m)] = 0.0
    mass = cells.sum(axis=(1, 2))
    stuck = np.flatnonzero((pair.context_marginal > 0) & (mass <= 0))
    if stuck.size:
        raise RejectionSamplingError(f"contexts {stuck[:5].tolist()} can never produce distinct responses")
    cum = np.cumsum(cells.reshape(k, m * m), axis=1)
    cum /= np.where(mass > 0, mass, 1.0)[:, None]
    cum_x = np.cumsum(pair.context_marginal)
    x = np.minimum(np.searchsorted(cum_x, rng.random(n) * cum_x[-1], side="right"), k - 1)
    u = rng.random(n)
    flat = np.minimum((cum[x] <= u[:, None]).sum(axis=1), m * m - 1)
    pos, neg = np.divmod(flat, m)
    return TripletDataset(np.stack([x, pos, neg], axis=1), item_set_ref=item_set_ref, seed=seed)
