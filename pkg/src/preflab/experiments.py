"""Seeded synthetic experiments: margin, negative-distribution sweep, connectivity optimization.

Each experiment is split into independent units keyed by (variant, seed).
A unit regenerates its ground truth from the seed, so units can run in any
order or in separate processes; rows are sorted before writing.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .connectivity import GDAConfig, TestDistributionQ, VariationalConfig, consistent_distribution, \
    optimize_negative_for_connectivity, variational_connectivity
from .core import ItemSet
from .design import alpha_negative, bt_consistent_pair, rank_normalize, sample_triplets, scale_score, \
    uniform_negative
from .errors import PreflabError
from .evaluation import accuracy, bottom_fraction_accuracy, estimation_error
from .scorers import ScoreModel, init_model
from .training import TrainConfig, config_dict, train_bt

log = logging.getLogger(__name__)

EXPERIMENTS = ("margin", "alpha_sweep", "conn_optimize")
CSV_HEADER = ["experiment", "seed", "n", "variant", "accuracy", "acc_bottom10", "acc_bottom30",
              "lambda_conn", "estimation_error", "final_val_loss", "status"]

DEFAULT_N_GRID = (256, 512, 1024, 2048, 4096, 8192)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    m: int = 16
    d: int = 128
    hidden: int = 32
    embed: int = 8
    n_grid: tuple = DEFAULT_N_GRID
    alpha_grid: tuple = tuple(np.linspace(-16.0, 16.0, 9).tolist())
    beta_grid: tuple = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    seeds: tuple = (0, 1, 2, 3, 4)
    train: TrainConfig = TrainConfig()
    variational: VariationalConfig = VariationalConfig()
    gda: GDAConfig = GDAConfig()
    output_path: str = ""

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        for name in ("n_grid", "alpha_grid", "beta_grid", "seeds"):
            value = tuple(getattr(self, name))
            if not value:
                raise ValueError(f"{name} must be nonempty")
            object.__setattr__(self, name, value)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        if "train" in obj:
            obj["train"] = TrainConfig.from_dict(obj["train"])
        if "variational" in obj:
            obj["variational"] = VariationalConfig(**obj["variational"])
        if "gda" in obj:
            gda = dict(obj["gda"])
            if "variational" in gda:
                gda["variational"] = VariationalConfig(**gda["variational"])
            obj["gda"] = GDAConfig(**gda)
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train"] = config_dict(self.train)
        return out


@dataclass(frozen=True)
class RunRecord:
    experiment: str
    seed: int
    n: int
    variant: str
    accuracy: float = float("nan")
    acc_bottom10: float = float("nan")
    acc_bottom30: float = float("nan")
    lambda_conn: float = float("nan")
    estimation_error: float = float("nan")
    final_val_loss: float = float("nan")
    status: str = "ok"

    def row(self) -> list:
        return [self.experiment, self.seed, self.n, self.variant] + [
            _fmt(getattr(self, k)) for k in CSV_HEADER[4:10]] + [self.status]


@dataclass(frozen=True)
class GroundTruth:
    items: ItemSet
    target: ScoreModel
    table: np.ndarray = field(repr=False)


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def derive_seed(*keys) -> int:
    """A 63-bit seed from any sequence of nonnegative integers."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def gen_ground_truth(m: int, d: int, hidden: int, embed: int, seed: int) -> GroundTruth:
    """Standard-normal items and a frozen random cosine-MLP target scored on every pair."""
    if min(m, d, hidden, embed) <= 0:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(derive_seed(seed, 1))
    items = ItemSet(rng.standard_normal((m, d)))
    target = init_model("cosine_mlp", {"d": d, "hidden": hidden, "embed": embed}, derive_seed(seed, 2))
    return GroundTruth(items, target, target.score_table(items))


# stream tags
_GT, _TRAIN, _VAL, _INIT = 11, 12, 13, 14


def _train_and_eval(cfg: ExperimentConfig, gt: GroundTruth, pair, fit_target, base: int, seed: int, n: int,
                    variant: str, lam: float) -> RunRecord:
    """Sample, fit a fresh cosine MLP, and score it against the original target ordering."""
    q = TestDistributionQ.uniform(cfg.m, cfg.m)
    train = sample_triplets(pair, n, derive_seed(base, seed, _TRAIN, n))
    val = sample_triplets(pair, cfg.train.validation_size, derive_seed(base, seed, _VAL, n))
    tcfg = replace(cfg.train, seed=derive_seed(base, seed, _INIT, n))
    try:
        res = train_bt("cosine_mlp", gt.items, train, val, tcfg, hidden=cfg.hidden, embed=cfg.embed)
    except PreflabError as exc:
        log.warning("cell %s seed=%s n=%s failed: %s", variant, seed, n, exc)
        return RunRecord(cfg.experiment, seed, n, variant, lambda_conn=lam, status="diverged")
    fitted = res.model.score_table(gt.items)
    return RunRecord(
        cfg.experiment, seed, n, variant,
        accuracy=accuracy(fitted, gt.table, q),
        acc_bottom10=bottom_fraction_accuracy(fitted, gt.table, q, 0.1),
        acc_bottom30=bottom_fraction_accuracy(fitted, gt.table, q, 0.3),
        lambda_conn=lam,
        estimation_error=estimation_error(fitted, fit_target, q),
        final_val_loss=res.final_validation_loss,
    )


def _connectivity(cfg, gt, target, p_minus, base, seed) -> float:
    q = TestDistributionQ.uniform(cfg.m, cfg.m)
    vcfg = replace(cfg.variational, seed=derive_seed(base, seed, 21), hidden=cfg.hidden, embed=cfg.embed)
    dist = consistent_distribution(target, p_minus)
    return variational_connectivity(dist, q, "cosine_mlp", vcfg, items=gt.items).value


def _margin_unit(cfg: ExperimentConfig, base: int, seed: int, variant: str) -> list:
    gt = gen_ground_truth(cfg.m, cfg.d, cfg.hidden, cfg.embed, derive_seed(base, seed, _GT))
    target = gt.table if variant == "raw" else rank_normalize(gt.table)
    p_minus = uniform_negative(cfg.m, cfg.m)
    pair = bt_consistent_pair(target, p_minus)
    lam = _connectivity(cfg, gt, target, p_minus, base, seed)
    return [_train_and_eval(cfg, gt, pair, target, base, seed, n, variant, lam) for n in cfg.n_grid]


def _alpha_unit(cfg: ExperimentConfig, base: int, seed: int, alpha: float) -> list:
    gt = gen_ground_truth(cfg.m, cfg.d, cfg.hidden, cfg.embed, derive_seed(base, seed, _GT))
    p_minus = alpha_negative(gt.table, alpha)
    pair = bt_consistent_pair(gt.table, p_minus)
    lam = _connectivity(cfg, gt, gt.table, p_minus, base, seed)
    variant = f"alpha={alpha:g}"
    return [_train_and_eval(cfg, gt, pair, gt.table, base, seed, n, variant, lam) for n in cfg.n_grid]


def _conn_unit(cfg: ExperimentConfig, base: int, seed: int, beta: float) -> list:
    gt = gen_ground_truth(cfg.m, cfg.d, cfg.hidden, cfg.embed, derive_seed(base, seed, _GT))
    target = scale_score(gt.table, beta)
    q = TestDistributionQ.uniform(cfg.m, cfg.m)
    vcfg = replace(cfg.gda.variational, seed=derive_seed(base, seed, 31), hidden=cfg.hidden, embed=cfg.embed)
    gcfg = replace(cfg.gda, seed=derive_seed(base, seed, 32), variational=vcfg)
    opt = optimize_negative_for_connectivity(target, q, "cosine_mlp", gcfg, items=gt.items)
    rows = []
    for name, p_minus, lam in (("uniform", uniform_negative(cfg.m, cfg.m), opt.baseline.value),
                               ("optimized", opt.p_minus, opt.achieved.value)):
        pair = bt_consistent_pair(target, p_minus)
        for n in cfg.n_grid:
            rows.append(_train_and_eval(cfg, gt, pair, target, base, seed, n, f"beta={beta:g}/{name}", lam))
    return rows


def _units(cfg: ExperimentConfig):
    if cfg.experiment == "margin":
        return [(_margin_unit, s, v) for v in ("raw", "rank") for s in cfg.seeds]
    if cfg.experiment == "alpha_sweep":
        return [(_alpha_unit, s, float(a)) for a in cfg.alpha_grid for s in cfg.seeds]
    return [(_conn_unit, s, float(b)) for b in cfg.beta_grid for s in cfg.seeds]


def _run_unit(args):
    fn, cfg, base, seed, key = args
    return fn(cfg, base, seed, key)


def worker_count() -> int:
    return max(1, int(os.environ.get("PREFLAB_THREADS", "1")))


def run_experiment(cfg: ExperimentConfig, base_seed: int = 0, workers: int | None = None) -> list:
    """Run every unit and return RunRecords in a deterministic order."""
    jobs = [(fn, cfg, base_seed, seed, key) for fn, seed, key in _units(cfg)]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_unit, jobs))
    else:
        chunks = []
        for job in jobs:
            log.info("%s unit seed=%s key=%s", cfg.experiment, job[3], job[4])
            chunks.append(_run_unit(job))
    records = [r for chunk in chunks for r in chunk]
    return sorted(records, key=_sort_key)


def _sort_key(r: RunRecord):
    """Numeric order on the leading ``name=value`` of a variant, then n, then seed."""
    _, _, num = r.variant.split("/")[0].partition("=")
    try:
        value = float(num)
    except ValueError:
        value = 0.0
    return (value, r.variant), r.n, r.seed


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def read_records(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {k: (float(row[k]) if row[k] else float("nan")) for k in CSV_HEADER[4:10]}
            out.append(RunRecord(row["experiment"], int(row["seed"]), int(row["n"]), row["variant"],
                                 status=row["status"], **vals))
    return out


def run_margin_experiment(cfg: ExperimentConfig, base_seed: int = 0) -> str:
    return records_to_csv(run_experiment(replace(cfg, experiment="margin"), base_seed))


def run_alpha_sweep(cfg: ExperimentConfig, base_seed: int = 0) -> str:
    return records_to_csv(run_experiment(replace(cfg, experiment="alpha_sweep"), base_seed))


def run_conn_optimize(cfg: ExperimentConfig, base_seed: int = 0) -> str:
    return records_to_csv(run_experiment(replace(cfg, experiment="conn_optimize"), base_seed))
