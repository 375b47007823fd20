"""Ranking accuracy, margin slices, estimation and misspecification errors.

All expectations over Q_pair are exact sums over ordered (context, y, y')
triples, never Monte Carlo.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .connectivity import TestDistributionQ
from .core import ItemSet, TabularTripletDistribution, comparison_distribution, cprd_from_distribution
from .errors import UndefinedAccuracyError
from .scorers import ScoreModel


def _margins(table) -> np.ndarray:
    t = np.atleast_2d(np.asarray(table, dtype=np.float64))
    return t[:, :, None] - t[:, None, :]


def _scored_pairs(fitted, target, q: TestDistributionQ):
    """Flattened (weight, fitted margin, target margin) over ordered pairs with a nonzero target margin."""
    df, dt = _margins(fitted), _margins(target)
    w = q.pair_weights()
    keep = (dt != 0) & (w > 0)
    if not keep.any():
        raise UndefinedAccuracyError("every pair is tied under the target score")
    return w[keep], df[keep], dt[keep]


def order_preserved(a, b) -> np.ndarray:
    """|b - a| <= |a| with a != 0 forces sign(b) == sign(a)."""
    return np.sign(np.asarray(a)) == np.sign(np.asarray(b))


def accuracy(fitted, target, q: TestDistributionQ) -> float:
    """Q_pair probability that fitted and target margins have the same strict sign."""
    w, df, dt = _scored_pairs(fitted, target, q)
    return float(np.sum(w * (np.sign(df) == np.sign(dt))) / np.sum(w))


def bottom_fraction_accuracy(fitted, target, q: TestDistributionQ, frac: float) -> float:
    """Accuracy restricted to the ``frac`` share (by Q weight) of pairs with the smallest |target margin|."""
    if not 0 < frac <= 1:
        raise ValueError("frac must lie in (0, 1]")
    w, df, dt = _scored_pairs(fitted, target, q)
    order = np.argsort(np.abs(dt), kind="stable")
    w, df, dt = w[order], df[order], dt[order]
    cum = np.cumsum(w)
    cutoff = frac * cum[-1]
    # smallest prefix whose weight reaches the requested share
    count = int(np.searchsorted(cum, cutoff * (1 - 1e-12), side="left")) + 1
    w, df, dt = w[:count], df[:count], dt[:count]
    return float(np.sum(w * (np.sign(df) == np.sign(dt))) / np.sum(w))


def estimation_error(fitted, target, q: TestDistributionQ) -> float:
    """E_{Q_pair}[(Delta_fitted - Delta_target)^2], diagonal pairs included (they contribute 0)."""
    diff = _margins(fitted) - _margins(target)
    return float(np.sum(q.pair_weights() * diff ** 2))


def accuracy_lower_bound(fitted, target, q: TestDistributionQ) -> float:
    """Q_pair probability that the margin error is at most the target margin, same tie exclusion."""
    w, df, dt = _scored_pairs(fitted, target, q)
    return float(np.sum(w * (np.abs(df - dt) <= np.abs(dt))) / np.sum(w))


def misspecification_error(model: ScoreModel | np.ndarray, dist: TabularTripletDistribution,
                           items: ItemSet | None = None) -> float:
    """E_P~[(omega - sigma(Delta_model))^2] over unordered compared pairs."""
    table = model.score_table(items) if isinstance(model, ScoreModel) else np.asarray(model)
    w = comparison_distribution(dist).weights
    omega = cprd_from_distribution(dist).omega
    pred = expit(_margins(table))
    return float(np.sum(w * (omega - pred) ** 2))


@dataclass(frozen=True)
class MarginHistogram:
    edges: np.ndarray
    weights: np.ndarray  # Q_pair mass per bin, sums to 1
    survival: np.ndarray  # Pr(|Delta| >= edge) for every edge
    min_nonzero_margin: float


def margin_histogram(target, q: TestDistributionQ, bins: int = 20) -> MarginHistogram:
    if bins < 1:
        raise ValueError("bins must be >= 1")
    mag = np.abs(_margins(target)).ravel()
    w = q.pair_weights().ravel()
    top = float(mag.max()) if mag.max() > 0 else 1.0
    weights, edges = np.histogram(mag, bins=bins, range=(0.0, top), weights=w)
    weights = weights / w.sum()
    survival = np.array([w[mag >= e].sum() for e in edges]) / w.sum()
    nz = mag[(mag > 1e-12) & (w > 0)]
    return MarginHistogram(edges, weights, survival, float(nz.min()) if nz.size else 0.0)
