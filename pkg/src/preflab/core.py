"""Finite item universe, triplet data, tabular triplet distributions and CPRDs.

Everything here is indexed as ``[context, item]`` or ``[context, item, item]``.
A triplet distribution stores one conditional table per context,
``tables[x, i, j] = P(y+ = i, y- = j | x)``, plus the context marginal.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import DegenerateDistributionError

PROB_ATOL = 1e-9


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ItemSet:
    """m vectors in R^d used both as contexts and as responses."""

    items: np.ndarray

    def __post_init__(self):
        items = _frozen(self.items)
        if items.ndim != 2:
            raise ValueError("items must be an (m, d) array")
        if items.shape[0] < 2:
            raise ValueError("an item set needs at least 2 items")
        if not np.all(np.isfinite(items)):
            raise ValueError("item coordinates must be finite")
        object.__setattr__(self, "items", items)

    @property
    def m(self) -> int:
        return self.items.shape[0]

    @property
    def d(self) -> int:
        return self.items.shape[1]

    def to_json(self) -> dict:
        return {"m": self.m, "d": self.d, "items": self.items.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ItemSet":
        items = np.asarray(obj["items"], dtype=np.float64)
        if items.shape != (obj["m"], obj["d"]):
            raise ValueError(f"items shape {items.shape} disagrees with m={obj['m']}, d={obj['d']}")
        return cls(items)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "ItemSet":
        return cls.from_json(json.loads(Path(path).read_text()))


class Triplet(NamedTuple):
    context_id: int
    pos_id: int
    neg_id: int


@dataclass(frozen=True)
class TripletDataset:
    """Observed triplets stored as an (n, 3) integer array of (context, pos, neg)."""

    triplets: np.ndarray
    item_set_ref: str = ""
    seed: int | None = None

    def __post_init__(self):
        t = _frozen(self.triplets, dtype=np.int64)
        if t.ndim != 2 or t.shape[1] != 3 or t.shape[0] == 0:
            raise ValueError("a dataset is a nonempty (n, 3) array of indices")
        if t.min() < 0:
            raise ValueError("indices must be nonnegative")
        object.__setattr__(self, "triplets", t)

    def __len__(self) -> int:
        return self.triplets.shape[0]

    def __iter__(self) -> Iterator[Triplet]:
        for row in self.triplets:
            yield Triplet(*map(int, row))

    @property
    def contexts(self) -> np.ndarray:
        return self.triplets[:, 0]

    @property
    def pos(self) -> np.ndarray:
        return self.triplets[:, 1]

    @property
    def neg(self) -> np.ndarray:
        return self.triplets[:, 2]

    def check_range(self, m: int) -> None:
        if self.triplets.max() >= m:
            raise ValueError(f"index {int(self.triplets.max())} out of range for m={m}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["context_id", "pos_id", "neg_id"])
            w.writerows(self.triplets.tolist())

    @classmethod
    def from_csv(cls, path, item_set_ref: str = "") -> "TripletDataset":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["context_id", "pos_id", "neg_id"]:
                raise ValueError(f"unexpected CSV header {reader.fieldnames}")
            rows = [(int(r["context_id"]), int(r["pos_id"]), int(r["neg_id"])) for r in reader]
        return cls(np.array(rows, dtype=np.int64).reshape(-1, 3), item_set_ref=item_set_ref)


@dataclass(frozen=True)
class TabularTripletDistribution:
    """Exact triplet probabilities: ``P(x, i, j) = context_marginal[x] * tables[x, i, j]``.

    Contexts with zero marginal may carry an all-zero table.
    """

    context_marginal: np.ndarray
    tables: np.ndarray

    def __post_init__(self):
        px = _frozen(self.context_marginal)
        t = _frozen(self.tables)
        if t.ndim != 3 or t.shape[1] != t.shape[2] or px.shape != (t.shape[0],):
            raise ValueError("tables must be (K, m, m) with a length-K context marginal")
        if np.any(px < 0) or np.any(t < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(px.sum() - 1.0) > PROB_ATOL:
            raise ValueError("context marginal must sum to 1")
        sums = t.sum(axis=(1, 2))
        ok = np.isclose(sums, 1.0, rtol=0, atol=PROB_ATOL) | ((px == 0) & (sums == 0))
        if not np.all(ok):
            raise ValueError("each context table must sum to 1")
        object.__setattr__(self, "context_marginal", px)
        object.__setattr__(self, "tables", t)

    @property
    def n_contexts(self) -> int:
        return self.tables.shape[0]

    @property
    def m(self) -> int:
        return self.tables.shape[1]

    def joint(self) -> np.ndarray:
        return self.context_marginal[:, None, None] * self.tables

    def has_diagonal_mass(self) -> bool:
        return bool(np.any(np.einsum("kii->ki", self.tables) > 0))

    def transposed(self) -> "TabularTripletDistribution":
        """Same distribution with the roles of winner and loser swapped."""
        return TabularTripletDistribution(self.context_marginal, self.tables.transpose(0, 2, 1))

    @classmethod
    def single_context(cls, table) -> "TabularTripletDistribution":
        table = np.asarray(table, dtype=np.float64)
        return cls(np.ones(1), table[None] / table.sum())

    def to_json(self) -> dict:
        return {
            "context_marginal": self.context_marginal.tolist(),
            "tables": self.tables.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TabularTripletDistribution":
        return cls(np.asarray(obj["context_marginal"]), np.asarray(obj["tables"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "TabularTripletDistribution":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ComparisonDistribution:
    """Distribution over (context, unordered pair) proportional to total oriented mass.

    ``weights[x, i, j]`` is set for ``i < j`` only and sums to one overall;
    ``normalizer`` is the off-diagonal joint mass it was divided by.
    """

    weights: np.ndarray
    normalizer: float

    def symmetric(self) -> np.ndarray:
        """Weights mirrored below the diagonal, i.e. a per-context adjacency matrix."""
        return self.weights + self.weights.transpose(0, 2, 1)


@dataclass(frozen=True)
class Cprd:
    """Per-context preference probabilities ``omega[x, i, j] = P(i beats j | x, {i, j})``."""

    omega: np.ndarray
    support: np.ndarray = field(repr=False)

    @property
    def n_contexts(self) -> int:
        return self.omega.shape[0]

    @property
    def m(self) -> int:
        return self.omega.shape[1]


def _pair_mass(dist: TabularTripletDistribution) -> np.ndarray:
    joint = dist.joint()
    return joint + joint.transpose(0, 2, 1)


def cprd_from_distribution(dist: TabularTripletDistribution) -> Cprd:
    joint = dist.joint()
    mass = joint + joint.transpose(0, 2, 1)
    m = dist.m
    support = (mass > 0) & ~np.eye(m, dtype=bool)[None]
    omega = np.zeros_like(mass)
    np.divide(joint, mass, out=omega, where=support)
    return Cprd(_frozen(omega), _frozen(support, dtype=bool))


def comparison_distribution(dist: TabularTripletDistribution) -> ComparisonDistribution:
    mass = _pair_mass(dist)
    upper = np.triu(mass, k=1)
    z = float(upper.sum())
    if z <= 0:
        raise DegenerateDistributionError("all triplet mass lies on the diagonal")
    return ComparisonDistribution(_frozen(upper / z), z)


def empirical_distribution(data: TripletDataset, m: int) -> TabularTripletDistribution:
    """Frequency table of the observed triplets; also the saturated-family MLE."""
    data.check_range(m)
    counts = np.zeros((m, m, m))
    np.add.at(counts, (data.contexts, data.pos, data.neg), 1.0)
    per_context = counts.sum(axis=(1, 2))
    tables = np.zeros_like(counts)
    seen = per_context > 0
    tables[seen] = counts[seen] / per_context[seen, None, None]
    return TabularTripletDistribution(per_context / len(data), tables)


def cprd_from_counts(data: TripletDataset, m: int) -> Cprd:
    return cprd_from_distribution(empirical_distribution(data, m))
