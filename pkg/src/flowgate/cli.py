"""Command-line orchestration of the pipeline.

Subcommands map to pipeline stages; every stage reads and writes the
documented file formats, so each is resumable from its on-disk
artifacts. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys

import numpy as np

from .core import ServiceTaxonomy
from .evaluate import (
    classification_metrics,
    emit_reports,
    evaluate_fold,
    fit_model,
)
from .core import DatasetSplit
from .ingest import (
    SamplerState,
    SniTrie,
    WindowWriter,
    anonymize,
    filter_flow,
    read_flow_file,
    read_taxonomy,
    write_flow_file,
)
from .nn.model import load_model, save_calibration, save_model
from .nn.network import NetTopology, desk_topology
from .nn.training import TrainConfig
from .preprocess import AblationConfig, transform_batch
from .reject import (
    RejectConfig,
    calibrate_threshold,
    predict_with_reject,
    score_model,
)
from .synth import standard_benchmark

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

SEED_ENV = "FLOWGATE_SEED"

# All hyperparameter defaults in one place; a config file may override
# any subset, flags override the config.
DEFAULT_CONFIG: dict = {
    "seed": 42,
    "topology": "desk",
    "split_n": 10,
    "val_fraction": 0.1,
    "temperature_mode": "fixed",
    "train": TrainConfig().to_dict(),
    "reject": {
        "method": "energy",
        "temperature": 3.0,
        "gradient_p": 1.5,
        "simloss_alpha": 0.075,
        "target_fpr": 0.05,
    },
    "ablation": {
        "use_flowstats": True,
        "use_iat": True,
        "use_dirs": True,
        "pstats_limit": 30,
        "standardize": True,
        "clip": True,
    },
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        raise UsageError(message)


def load_config(path: str | None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        with open(path) as fh:
            user = json.load(fh)
        _merge(config, user, [])
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        config["seed"] = int(env_seed)
        config["train"]["seed"] = int(env_seed)
    return config


def _merge(base: dict, override: dict, trail: list[str]) -> None:
    for key, value in override.items():
        if key not in base:
            raise DataError(f"unknown config key: {'.'.join(trail + [key])}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise DataError(f"config key {key} must be an object")
            _merge(base[key], value, trail + [key])
        else:
            base[key] = value


def _topology(config: dict, num_classes: int) -> NetTopology:
    if config["topology"] == "desk":
        return desk_topology(num_classes)
    if config["topology"] == "full":
        return NetTopology(num_classes=num_classes)
    raise DataError(f"unknown topology profile {config['topology']!r}")


def _reject_config(config: dict, method: str | None = None,
                   threshold: float | None = None) -> RejectConfig:
    r = config["reject"]
    return RejectConfig(
        method=method or r["method"],
        temperature=r["temperature"],
        gradient_p=r["gradient_p"],
        simloss_alpha=r["simloss_alpha"],
        target_fpr=r["target_fpr"],
        threshold=threshold,
    )


def _limit_threads() -> None:
    try:
        import threadpoolctl
    except ImportError:
        return
    threadpoolctl.threadpool_limits(1)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args, config) -> int:
    seed = args.seed if args.seed is not None else config["seed"]
    week1, week2, taxonomy = standard_benchmark(
        args.out, seed=seed, drift_factor=args.drift)
    print(f"wrote {week1}\nwrote {week2}\nwrote {taxonomy}")
    return EXIT_OK


def cmd_ingest(args, config) -> int:
    taxonomy = read_taxonomy(args.taxonomy)
    trie = SniTrie(taxonomy.patterns)
    sampler = SamplerState()
    os.makedirs(args.out, exist_ok=True)
    dropped: dict[str, int] = {}
    kept = 0
    with WindowWriter(args.out) as writer:
        for record in read_flow_file(args.input):
            sampler.observe_window(record.window_ts)
            if record.label is None and record.sni is not None:
                service = trie.match(record.sni)
                if service is not None:
                    record = type(record)(
                        pstats=record.pstats, stats=record.stats,
                        sni=record.sni, label=service,
                        window_ts=record.window_ts)
            keep, reason = filter_flow(record)
            if not keep:
                dropped[reason] = dropped.get(reason, 0) + 1
                continue
            if not sampler.decide(record.label):
                dropped["sampled"] = dropped.get("sampled", 0) + 1
                continue
            writer.write(anonymize(record))
            kept += 1
    print(f"kept {kept} flows; dropped {dropped}")
    return EXIT_OK


def cmd_split(args, config) -> int:
    from .evaluate import build_split

    taxonomy = read_taxonomy(args.taxonomy)
    counts: dict[str, int] = {s: 0 for s in taxonomy.services}
    for record in read_flow_file(args.flows):
        if record.label in counts:
            counts[record.label] += 1
    top_n = args.n if args.n is not None else config["split_n"]
    split = build_split(taxonomy, counts, top_n)
    with open(args.out, "w") as fh:
        json.dump({"known": sorted(split.known),
                   "unknown": sorted(split.unknown)}, fh, indent=2)
    print(f"known {len(split.known)} / unknown {len(split.unknown)} -> {args.out}")
    return EXIT_OK


def _load_split(path: str) -> DatasetSplit:
    with open(path) as fh:
        data = json.load(fh)
    return DatasetSplit(known=frozenset(data["known"]),
                        unknown=frozenset(data["unknown"]))


def cmd_train(args, config) -> int:
    taxonomy = read_taxonomy(args.taxonomy)
    split = _load_split(args.split)
    classes = sorted(split.known)
    records = [r for r in read_flow_file(args.train) if r.label in split.known]
    if not records:
        raise DataError("no flows of known services in the training file")

    train_config = TrainConfig(**config["train"])
    ablation = AblationConfig(**config["ablation"])
    rng = np.random.default_rng(train_config.seed)
    order = rng.permutation(len(records))
    n_val = max(1, int(round(len(records) * config["val_fraction"])))
    val_records = [records[i] for i in order[:n_val]]
    train_records = [records[i] for i in order[n_val:]]

    model, val_acc = fit_model(
        train_records, val_records, classes, taxonomy,
        _topology(config, len(classes)), train_config, ablation,
        temperature_mode=config["temperature_mode"],
        temperature_value=config["reject"]["temperature"])
    save_model(model, args.out)
    write_flow_file(os.path.join(args.out, "val_flows.csv"), val_records)
    print(f"trained on {len(train_records)} flows, "
          f"best validation accuracy {val_acc:.4f} -> {args.out}")
    return EXIT_OK


def cmd_calibrate(args, config) -> int:
    model = load_model(args.model)
    val_path = args.val or os.path.join(args.model, "val_flows.csv")
    val_records = list(read_flow_file(val_path))
    if not val_records:
        raise DataError(f"no validation flows in {val_path}")
    reject = _reject_config(config, args.method)
    p, f = transform_batch(val_records, model.scalers, model.ablation)
    _, scores = score_model(model, p, f, reject)
    threshold = calibrate_threshold(scores, reject.target_fpr)
    save_calibration(model, args.model, {
        "method": reject.method,
        "temperature": reject.temperature,
        "gradient_p": reject.gradient_p,
        "simloss_alpha": reject.simloss_alpha,
        "target_fpr": reject.target_fpr,
        "threshold": threshold,
    })
    print(f"{reject.method} threshold {threshold!r} -> {args.model}/meta.json")
    return EXIT_OK


def cmd_evaluate(args, config) -> int:
    model = load_model(args.model)
    taxonomy = model.taxonomy
    split = DatasetSplit(
        known=frozenset(model.classes),
        unknown=frozenset(taxonomy.services) - frozenset(model.classes))
    test_records = [r for r in read_flow_file(args.test)
                    if r.label in set(taxonomy.services)]
    if not test_records:
        raise DataError("no labeled test flows matching the taxonomy")
    val_records = list(read_flow_file(
        args.val or os.path.join(args.model, "val_flows.csv")))
    methods = [args.method] if args.method else ["softmax", "energy", "gradient"]
    configs = {m: _reject_config(config, m) for m in methods}
    outcome = evaluate_fold(model, val_records, test_records, split, configs)
    os.makedirs(args.out, exist_ok=True)
    written = emit_reports(outcome.metrics, list(outcome.nc.values()), args.out)

    # Persist raw predictions so `report` can rebuild everything later.
    predictions_path = os.path.join(args.out, "predictions.csv")
    known_test = [r for r in test_records if r.label in split.known]
    p, f = transform_batch(known_test, model.scalers, model.ablation)
    from .nn.training import eval_logits
    logits = eval_logits(model.network, p, f)
    with open(predictions_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["LABEL", "LABEL_PRED"])
        for record, idx in zip(known_test, logits.argmax(axis=1)):
            writer.writerow([record.label, model.classes[idx]])
    written.append(predictions_path)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_score(args, config) -> int:
    model = load_model(args.model)
    if model.calibration is None:
        raise DataError("model bundle is not calibrated; run `calibrate` first")
    cal = model.calibration
    reject = RejectConfig(
        method=cal["method"], temperature=cal["temperature"],
        gradient_p=cal["gradient_p"], simloss_alpha=cal["simloss_alpha"],
        target_fpr=cal["target_fpr"], threshold=cal["threshold"])
    records = list(read_flow_file(args.input))
    p, f = transform_batch(records, model.scalers, model.ablation)
    verdicts = predict_with_reject(model, p, f, reject)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["LABEL_PRED", "SCORE", "REJECTED"])
        for verdict in verdicts:
            writer.writerow([verdict.predicted, repr(verdict.score),
                             int(verdict.rejected)])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_report(args, config) -> int:
    taxonomy = read_taxonomy(args.taxonomy)
    labels: list[str] = []
    predictions: list[str] = []
    with open(args.predictions, newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(row["LABEL"])
            predictions.append(row["LABEL_PRED"])
    if not labels:
        raise DataError(f"no predictions in {args.predictions}")
    report = classification_metrics(predictions, labels, taxonomy)
    for path in emit_reports(report, [], args.out):
        print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="flowgate")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--deterministic", action="store_true",
                        help="force single-threaded numeric reductions")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--drift", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="label, filter, sample, anonymize")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="build a group-coherent known/unknown split")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--flows", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model bundle")
    p.add_argument("--train", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="calibrate the reject threshold")
    p.add_argument("--model", required=True)
    p.add_argument("--val")
    p.add_argument("--method")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="classification and NC reports")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--val")
    p.add_argument("--method")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score", help="score flows with a calibrated model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="rebuild reports from predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.deterministic:
            _limit_threads()
        config = load_config(args.config)
        return args.func(args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
