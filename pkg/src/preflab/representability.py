"""Bradley-Terry representability of a CPRD and conditionally independent realizations.

A CPRD is BT-representable iff, in every context, the log-odds
``log(omega[i, j] / omega[j, i])`` are differences of per-item scores. We
propagate scores along a BFS spanning tree of the support graph and then
check every supported edge; a failing non-tree edge closes a cycle whose
log-odds sum is nonzero.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import Cprd, TabularTripletDistribution
from .errors import InfiniteLogOddsError, ScoreRangeError, UndefinedScoreError

EXP_LIMIT = 700.0


@dataclass(frozen=True)
class RepresentabilityVerdict:
    representable: bool
    witness_scores: np.ndarray | None = None
    violating_cycle: list | None = None
    cycle_context: int | None = None
    cycle_log_odds: float | None = None
    max_residual: float = 0.0

    def to_json(self) -> dict:
        out = {"representable": self.representable, "max_residual": self.max_residual}
        if self.representable:
            out["witness_scores"] = self.witness_scores.tolist()
        else:
            out["violating_cycle"] = list(self.violating_cycle)
            out["cycle_context"] = self.cycle_context
            out["cycle_log_odds"] = self.cycle_log_odds
        return out


@dataclass(frozen=True)
class ConditionalPair:
    """Per-context positive and negative response distributions, each (K, m).

    Point masses are allowed; a finite implied score additionally needs
    p_minus > 0 wherever p_plus > 0, which :func:`implied_score` checks.
    """

    p_plus: np.ndarray
    p_minus: np.ndarray
    context_marginal: np.ndarray

    def __post_init__(self):
        pp = np.array(self.p_plus, dtype=np.float64)
        pm = np.array(self.p_minus, dtype=np.float64)
        px = np.array(self.context_marginal, dtype=np.float64)
        if pp.shape != pm.shape or pp.ndim != 2 or px.shape != (pp.shape[0],):
            raise ValueError("p_plus and p_minus must be (K, m) with a length-K marginal")
        for name, v in (("p_plus", pp), ("p_minus", pm)):
            if np.any(v < 0) or not np.allclose(v.sum(axis=1), 1.0, rtol=0, atol=1e-9):
                raise ValueError(f"{name} rows must be probability vectors")
        if np.any(px < 0) or abs(px.sum() - 1.0) > 1e-9:
            raise ValueError("context marginal must be a probability vector")
        for name, v in (("p_plus", pp), ("p_minus", pm), ("context_marginal", px)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def m(self) -> int:
        return self.p_plus.shape[1]

    def to_json(self) -> dict:
        return {"p_plus": self.p_plus.tolist(), "p_minus": self.p_minus.tolist(),
                "context_marginal": self.context_marginal.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ConditionalPair":
        return cls(obj["p_plus"], obj["p_minus"], obj["context_marginal"])


class ImpliedScore(NamedTuple):
    scores: np.ndarray
    # True where p_plus == 0, in which case scores holds -inf
    zero_plus: np.ndarray


def _tree_path(parent: np.ndarray, a: int, b: int) -> list:
    """Vertices on the tree path from a to b (inclusive)."""
    up_a = [a]
    while parent[up_a[-1]] >= 0:
        up_a.append(int(parent[up_a[-1]]))
    up_b = [b]
    while parent[up_b[-1]] >= 0:
        up_b.append(int(parent[up_b[-1]]))
    on_a = set(up_a)
    lca = next(v for v in up_b if v in on_a)
    head = up_a[:up_a.index(lca) + 1]
    tail = up_b[:up_b.index(lca)]
    return head + tail[::-1]


def check_bt_representable(cprd: Cprd, tol: float = 1e-9) -> RepresentabilityVerdict:
    omega, support = cprd.omega, cprd.support
    k, m = omega.shape[0], omega.shape[1]
    if np.any(support & ((omega <= 0) | (omega >= 1))):
        x, i, j = map(int, np.argwhere(support & ((omega <= 0) | (omega >= 1)))[0])
        raise InfiniteLogOddsError(f"pair ({i}, {j}) in context {x} has one-sided preference {omega[x, i, j]}")
    log_odds = np.zeros_like(omega)
    np.log(omega, out=log_odds, where=support)
    log_odds = np.where(support, log_odds - log_odds.transpose(0, 2, 1), 0.0)

    scores = np.zeros((k, m))
    max_resid = 0.0
    worst_excess, violation = 0.0, None
    for x in range(k):
        s, parent = scores[x], np.full(m, -1)
        seen = np.zeros(m, dtype=bool)
        for root in range(m):
            if seen[root]:
                continue
            seen[root] = True
            queue = deque([root])
            while queue:
                i = queue.popleft()
                for j in np.flatnonzero(support[x, i]):
                    if not seen[j]:
                        seen[j] = True
                        parent[j] = i
                        # log_odds[i, j] = s_i - s_j
                        s[j] = s[i] - log_odds[x, i, j]
                        queue.append(j)
        iu, ju = np.nonzero(np.triu(support[x], k=1))
        if iu.size == 0:
            continue
        resid = log_odds[x, iu, ju] - (s[iu] - s[ju])
        max_resid = max(max_resid, float(np.abs(resid).max()))
        excess = np.abs(resid) - tol * (1.0 + np.abs(log_odds[x, iu, ju]))
        e = int(np.argmax(excess))
        if excess[e] > worst_excess:
            worst_excess = float(excess[e])
            violation = (x, int(iu[e]), int(ju[e]), float(resid[e]), parent.copy())

    if violation is None:
        return RepresentabilityVerdict(True, witness_scores=scores, max_residual=max_resid)
    x, i, j, resid, parent = violation
    # cycle i -> j -> (tree path) -> i; its log-odds sum telescopes to the edge residual
    cycle = [i] + _tree_path(parent, j, i)
    total = resid
    if total < 0:
        cycle, total = cycle[::-1], -total
    return RepresentabilityVerdict(False, violating_cycle=cycle, cycle_context=x,
                                   cycle_log_odds=float(total), max_residual=max_resid)


def cycle_log_odds(cprd: Cprd, context: int, cycle: list) -> float:
    """Sum of log(omega[a, b] / omega[b, a]) along consecutive cycle vertices."""
    om = cprd.omega[context]
    return float(sum(np.log(om[a, b] / om[b, a]) for a, b in zip(cycle[:-1], cycle[1:])))


def ci_factorize(score_table, base) -> ConditionalPair:
    """q- proportional to mu and q+ proportional to mu * exp(r), per context."""
    r = np.atleast_2d(np.asarray(score_table, dtype=np.float64))
    mu = np.broadcast_to(np.asarray(base, dtype=np.float64), r.shape)
    if np.any(mu <= 0):
        raise ValueError("base distribution must be strictly positive")
    if np.any(np.abs(r) > EXP_LIMIT):
        raise ScoreRangeError("scores exceed the safe exponent range")
    q_minus = mu / mu.sum(axis=1, keepdims=True)
    w = mu * np.exp(r)
    q_plus = w / w.sum(axis=1, keepdims=True)
    k = r.shape[0]
    return ConditionalPair(q_plus, q_minus, np.full(k, 1.0 / k))


def implied_score(pair: ConditionalPair) -> ImpliedScore:
    pp, pm = pair.p_plus, pair.p_minus
    if np.any((pp > 0) & (pm == 0)):
        raise UndefinedScoreError("p_minus vanishes where p_plus is positive")
    zero_plus = pp == 0
    scores = np.full(pp.shape, -np.inf)
    np.log(np.divide(pp, pm, out=np.ones_like(pp), where=~zero_plus), out=scores, where=~zero_plus)
    return ImpliedScore(scores, zero_plus)


def product_distribution(pair: ConditionalPair) -> TabularTripletDistribution:
    tables = pair.p_plus[:, :, None] * pair.p_minus[:, None, :]
    return TabularTripletDistribution(pair.context_marginal, tables)
