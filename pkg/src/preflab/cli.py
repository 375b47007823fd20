"""Command line entry point: ``preflab gen|sample|train|diagnose|connectivity|experiment``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .connectivity import TestDistributionQ, VariationalConfig, linear_connectivity, tabular_connectivity, \
    variational_connectivity
from .core import ItemSet, TabularTripletDistribution, TripletDataset, cprd_from_distribution, \
    empirical_distribution
from .design import alpha_negative, bt_consistent_pair, rank_normalize, sample_triplets, scale_score, \
    uniform_negative
from .errors import PreflabError
from .experiments import EXPERIMENTS, ExperimentConfig, gen_ground_truth, records_to_csv, run_experiment
from .representability import check_bt_representable
from .scorers import ScoreModel
from .training import TrainConfig, train_bt


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_json(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def cmd_gen(args) -> None:
    cfg = _load_json(args.config)
    dims = {k: cfg.get(k, v) for k, v in (("m", 16), ("d", 128), ("hidden", 32), ("embed", 8))}
    gt = gen_ground_truth(seed=args.seed, **dims)
    _emit(json.dumps(gt.items.to_json()) + "\n", args.out)
    if args.model_out:
        gt.target.save(args.model_out)
    if args.table_out:
        Path(args.table_out).write_text(json.dumps({"scores": gt.table.tolist()}))


def _target_table(args) -> np.ndarray:
    items = ItemSet.load(args.items)
    table = ScoreModel.load(args.model).score_table(items)
    if args.rank:
        table = rank_normalize(table)
    return scale_score(table, args.beta)


def cmd_sample(args) -> None:
    target = _target_table(args)
    k, m = target.shape
    p_minus = uniform_negative(k, m) if args.alpha is None else alpha_negative(target, args.alpha)
    pair = bt_consistent_pair(target, p_minus)
    data = sample_triplets(pair, args.n, args.seed, item_set_ref=str(args.items))
    if args.out:
        data.to_csv(args.out)
    else:
        sys.stdout.write("context_id,pos_id,neg_id\n")
        for row in data.triplets.tolist():
            sys.stdout.write(",".join(map(str, row)) + "\n")
    if args.pair_out:
        Path(args.pair_out).write_text(json.dumps(pair.to_json()))


def cmd_train(args) -> None:
    items = ItemSet.load(args.items)
    tcfg = TrainConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    train = TripletDataset.from_csv(args.train)
    val = TripletDataset.from_csv(args.val)
    for data in (train, val):
        data.check_range(items.m)
    result = train_bt(args.kind, items, train, val, tcfg)
    payload = {"selected_lr": result.selected_lr, "final_validation_loss": result.final_validation_loss,
               "final_losses_by_lr": {repr(k): v for k, v in result.final_losses_by_lr.items()},
               "model": result.model.to_json()}
    _emit(json.dumps(payload) + "\n", args.out)
    if args.history:
        result.write_history(args.history)


def _distribution(args) -> TabularTripletDistribution:
    if args.table:
        return TabularTripletDistribution.load(args.table)
    if args.data:
        data = TripletDataset.from_csv(args.data)
        m = args.m if args.m else int(data.triplets.max()) + 1
        return empirical_distribution(data, m)
    raise SystemExit("give either --table or --data")


def cmd_diagnose(args) -> None:
    verdict = check_bt_representable(cprd_from_distribution(_distribution(args)), tol=args.tol)
    _emit(json.dumps(verdict.to_json()) + "\n", args.out)


def cmd_connectivity(args) -> None:
    dist = _distribution(args)
    q = TestDistributionQ.uniform(dist.n_contexts, dist.m)
    if args.method == "tabular_spectral":
        est = tabular_connectivity(dist)
    elif args.method == "linear_spectral":
        est = linear_connectivity(dist, q, np.load(args.features))
    else:
        vcfg = VariationalConfig(**_load_json(args.config))
        if args.seed is not None:
            vcfg = replace(vcfg, seed=args.seed)
        items = ItemSet.load(args.items) if args.items else None
        features = np.load(args.features) if args.features else None
        est = variational_connectivity(dist, q, args.class_kind, vcfg, items=items, features=features)
    _emit(json.dumps(est.to_json()) + "\n", args.out)


def cmd_experiment(args) -> None:
    obj = _load_json(args.config)
    obj["experiment"] = args.name
    cfg = ExperimentConfig.from_dict(obj)
    out = args.out or cfg.output_path
    _emit(records_to_csv(run_experiment(cfg, base_seed=args.seed or 0)), out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="preflab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate items and a frozen cosine-MLP target")
    p.add_argument("--config", help="JSON with m, d, hidden, embed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="item set JSON (stdout if omitted)")
    p.add_argument("--model-out", help="target model checkpoint JSON")
    p.add_argument("--table-out", help="target score table JSON")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sample", help="sample triplets from a BT-consistent distribution")
    p.add_argument("--items", required=True)
    p.add_argument("--model", required=True, help="target model checkpoint")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", type=float, help="negatives proportional to exp(alpha * r); uniform if omitted")
    p.add_argument("--beta", type=float, default=1.0, help="scale the target score")
    p.add_argument("--rank", action="store_true", help="rank-normalize the target first")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="dataset CSV")
    p.add_argument("--pair-out", help="write the (p+, p-) pair as JSON")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="fit a BT score model with Adam and lr selection")
    p.add_argument("--items", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--kind", default="cosine_mlp", choices=("cosine_mlp", "tabular"))
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="result JSON with the model checkpoint")
    p.add_argument("--history", help="loss history CSV")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("diagnose", cmd_diagnose, "check BT representability of a CPRD"),
                                 ("connectivity", cmd_connectivity, "connectivity degree of a distribution")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--table", help="TabularTripletDistribution JSON")
        p.add_argument("--data", help="triplet CSV (uses its empirical distribution)")
        p.add_argument("--m", type=int, help="item count for --data")
        p.add_argument("--out")
        p.set_defaults(func=func)
        if name == "diagnose":
            p.add_argument("--tol", type=float, default=1e-9)
        else:
            p.add_argument("--method", default="variational",
                           choices=("tabular_spectral", "linear_spectral", "variational"))
            p.add_argument("--class-kind", default="tabular", choices=("tabular", "linear", "cosine_mlp"))
            p.add_argument("--items", help="item set JSON for the cosine_mlp class")
            p.add_argument("--features", help=".npy feature tensor (K, m, k) for the linear class")
            p.add_argument("--config", help="VariationalConfig JSON")
            p.add_argument("--seed", type=int)

    p = sub.add_parser("experiment", help="run a synthetic experiment and write per-seed CSV")
    p.add_argument("name", choices=EXPERIMENTS)
    p.add_argument("--config", help="ExperimentConfig JSON (experiment field is taken from NAME)")
    p.add_argument("--seed", type=int, default=0, help="base seed mixed into every random stream")
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except PreflabError as exc:
        print(f"preflab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
