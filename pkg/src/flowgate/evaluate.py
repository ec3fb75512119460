"""Classification and novelty-detection metrics, split construction,
the cross-week evaluation protocol, and report files.

Novelty detection is scored as binary classification with the unknown
class positive: TPR at a fixed FPR and partial AUROC restricted to the
low-FPR region (standardized so chance = 0.5).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import DatasetSplit, FlowRecord, ServiceTaxonomy
from .nn.model import Model
from .nn.network import NetTopology, Network
from .nn.training import TrainConfig, eval_logits, fit_temperature, train
from .preprocess import AblationConfig, fit_scalers, transform_batch
from .reject import METHODS, RejectConfig, calibrate_threshold, score_model

MIN_SAMPLES_PER_SERVICE = 100
PARTIAL_AUROC_MAX_FPR = 0.1


# ---------------------------------------------------------------------------
# Classification metrics


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    precision_sc: float
    recall_sc: float
    f1_sc: float
    support: int


@dataclass
class MetricReport:
    accuracy: float
    superclass_accuracy: float
    macro_f1: float
    superclass_macro_f1: float
    per_class: dict[str, ClassMetrics]
    confusion: dict[tuple[str, str], int]
    fold_id: int = 0


def _prf(true: list[str], pred: list[str]) -> dict[str, tuple[float, float, float, int]]:
    """Per-class precision/recall/F1 and support.

    Classes never appearing in the truth are excluded. A class that is
    never predicted gets precision 0 and hence F1 0.
    """
    classes = sorted(set(true))
    tp: dict[str, int] = {c: 0 for c in classes}
    fp: dict[str, int] = {c: 0 for c in classes}
    fn: dict[str, int] = {c: 0 for c in classes}
    for t, p in zip(true, pred):
        if t == p:
            tp[t] += 1
        else:
            fn[t] += 1
            if p in fp:
                fp[p] += 1
    out = {}
    for c in classes:
        support = tp[c] + fn[c]
        precision = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        recall = tp[c] / support if support else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        out[c] = (precision, recall, f1, support)
    return out


def classification_metrics(predictions: list[str], labels: list[str],
                           taxonomy: ServiceTaxonomy,
                           fold_id: int = 0) -> MetricReport:
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    if not labels:
        raise ValueError("empty input")
    group = taxonomy.group_of
    pred_sc = [group.get(p, p) for p in predictions]
    true_sc = [group.get(t, t) for t in labels]

    plain = _prf(labels, predictions)
    sclass = _prf(true_sc, pred_sc)

    accuracy = float(np.mean([p == t for p, t in zip(predictions, labels)]))
    sc_accuracy = float(np.mean([p == t for p, t in zip(pred_sc, true_sc)]))

    per_class: dict[str, ClassMetrics] = {}
    for service, (precision, recall, f1, support) in plain.items():
        g = group.get(service, service)
        p_sc, r_sc, f_sc, _ = sclass[g]
        per_class[service] = ClassMetrics(
            precision=precision, recall=recall, f1=f1,
            precision_sc=p_sc, recall_sc=r_sc, f1_sc=f_sc,
            support=support,
        )

    confusion: dict[tuple[str, str], int] = {}
    for t, p in zip(labels, predictions):
        confusion[(t, p)] = confusion.get((t, p), 0) + 1

    return MetricReport(
        accuracy=accuracy,
        superclass_accuracy=sc_accuracy,
        macro_f1=float(np.mean([v[2] for v in plain.values()])),
        superclass_macro_f1=float(np.mean([v[2] for v in sclass.values()])),
        per_class=per_class,
        confusion=confusion,
        fold_id=fold_id,
    )


# ---------------------------------------------------------------------------
# Novelty-detection metrics


def tpr_at_fpr(known_scores: np.ndarray, unknown_scores: np.ndarray,
               fpr: float) -> float:
    """TPR when the threshold is set to the (1-fpr)-quantile of known."""
    known_scores = np.asarray(known_scores, dtype=float)
    unknown_scores = np.asarray(unknown_scores, dtype=float)
    if known_scores.size == 0 or unknown_scores.size == 0:
        raise ValueError("both score sets must be non-empty")
    threshold = np.quantile(known_scores, 1.0 - fpr)
    return float(np.mean(unknown_scores > threshold))


def roc_points(known_scores: np.ndarray, unknown_scores: np.ndarray
               ) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) points of the threshold-sweep ROC, starting at (0, 0)."""
    known_scores = np.asarray(known_scores, dtype=float)
    unknown_scores = np.asarray(unknown_scores, dtype=float)
    scores = np.concatenate([unknown_scores, known_scores])
    positive = np.concatenate([
        np.ones(unknown_scores.size), np.zeros(known_scores.size)])
    order = np.argsort(-scores, kind="mergesort")
    scores = scores[order]
    positive = positive[order]
    tps = np.cumsum(positive)
    fps = np.cumsum(1.0 - positive)
    # Keep one point per distinct score value (the last of each run).
    last = np.r_[np.nonzero(np.diff(scores))[0], scores.size - 1]
    tpr = np.r_[0.0, tps[last] / unknown_scores.size]
    fpr = np.r_[0.0, fps[last] / known_scores.size]
    return fpr, tpr


def pauroc(known_scores: np.ndarray, unknown_scores: np.ndarray,
           max_fpr: float = PARTIAL_AUROC_MAX_FPR) -> float:
    """Standardized partial AUROC over FPR in [0, max_fpr].

    The trapezoidal area is rescaled so a chance-level detector scores
    0.5 and a perfect one 1.0.
    """
    if not 0 < max_fpr <= 1:
        raise ValueError("max_fpr must lie in (0, 1]")
    if np.asarray(known_scores).size == 0 or np.asarray(unknown_scores).size == 0:
        raise ValueError("both score sets must be non-empty")
    fpr, tpr = roc_points(known_scores, unknown_scores)
    below = fpr <= max_fpr
    fpr_cut = fpr[below]
    tpr_cut = tpr[below]
    if fpr_cut[-1] < max_fpr:
        # Interpolate the curve at the cut-off.
        tpr_at_cut = np.interp(max_fpr, fpr, tpr)
        fpr_cut = np.r_[fpr_cut, max_fpr]
        tpr_cut = np.r_[tpr_cut, tpr_at_cut]
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    area = float(trapezoid(tpr_cut, fpr_cut))
    chance = max_fpr ** 2 / 2.0
    return 0.5 * (1.0 + (area - chance) / (max_fpr - chance))


@dataclass
class NcReport:
    method: str
    threshold: float
    tpr_calibrated: float  # unknown fraction above the calibrated threshold
    tpr_exact: float  # TPR at the exact target FPR on the test scores
    pauroc: float
    realized_fpr: float  # known-test fraction above the calibrated threshold
    target_fpr: float
    fold_id: int = 0


# ---------------------------------------------------------------------------
# Known/unknown split construction


def build_split(taxonomy: ServiceTaxonomy, counts: dict[str, int],
                top_n: int) -> DatasetSplit:
    """Top-N split that never separates the services of one group.

    Groups are ranked by total flow count and admitted greedily while
    the cumulative service count stays within top_n; a group that would
    overflow is skipped and the following groups are still considered.
    """
    missing = set(taxonomy.services) - set(counts)
    if missing:
        raise ValueError(f"missing flow counts for: {sorted(missing)}")
    if top_n > len(taxonomy.services):
        raise ValueError("top_n exceeds the number of services")
    groups = taxonomy.groups()
    ranked = sorted(
        groups.items(),
        key=lambda item: (-sum(counts[s] for s in item[1]), item[0]),
    )
    known: list[str] = []
    for _, members in ranked:
        if len(known) + len(members) <= top_n:
            known.extend(members)
    known_set = frozenset(known)
    return DatasetSplit(
        known=known_set,
        unknown=frozenset(taxonomy.services) - known_set,
    )


# ---------------------------------------------------------------------------
# Model fitting helper shared by the protocol and the CLI


def fit_model(train_records: list[FlowRecord], val_records: list[FlowRecord],
              classes: list[str], taxonomy: ServiceTaxonomy,
              topology: NetTopology, train_config: TrainConfig,
              ablation: AblationConfig | None = None,
              temperature_mode: str = "fixed",
              temperature_value: float = 3.0) -> tuple[Model, float]:
    """Fit scalers on the training split, train, and pick a temperature.

    Returns the model and its best validation accuracy.
    """
    ablation = ablation or AblationConfig()
    index = {c: i for i, c in enumerate(classes)}
    scalers = fit_scalers(train_records, ablation, fitted_on="train")
    tr_p, tr_f = transform_batch(train_records, scalers, ablation)
    va_p, va_f = transform_batch(val_records, scalers, ablation)
    tr_y = np.array([index[r.label] for r in train_records])
    va_y = np.array([index[r.label] for r in val_records])

    network = Network(topology)
    result = train(network, tr_p, tr_f, tr_y, va_p, va_f, va_y, train_config)
    val_logits = eval_logits(network, va_p, va_f)
    temperature = fit_temperature(val_logits, va_y, mode=temperature_mode,
                                  fixed_value=temperature_value)
    model = Model(
        network=network,
        scalers=scalers,
        taxonomy=taxonomy,
        classes=list(classes),
        temperature=temperature,
        train_config=train_config,
        ablation=ablation,
    )
    return model, result.best_val_accuracy


# ---------------------------------------------------------------------------
# Cross-week protocol


@dataclass
class FoldOutcome:
    metrics: MetricReport
    nc: dict[str, NcReport]
    val_accuracy: float


@dataclass
class ProtocolReport:
    folds: list[FoldOutcome]
    split: DatasetSplit
    summary: dict[str, tuple[float, float]] = field(default_factory=dict)

    def summarize(self) -> dict[str, tuple[float, float]]:
        """Mean and stdev of every headline metric across folds."""
        series: dict[str, list[float]] = {}
        for fold in self.folds:
            series.setdefault("accuracy", []).append(fold.metrics.accuracy)
            series.setdefault("superclass_accuracy", []).append(
                fold.metrics.superclass_accuracy)
            series.setdefault("macro_f1", []).append(fold.metrics.macro_f1)
            series.setdefault("superclass_macro_f1", []).append(
                fold.metrics.superclass_macro_f1)
            for method, nc in fold.nc.items():
                series.setdefault(f"{method}_tpr_calibrated", []).append(
                    nc.tpr_calibrated)
                series.setdefault(f"{method}_tpr_exact", []).append(nc.tpr_exact)
                series.setdefault(f"{method}_pauroc", []).append(nc.pauroc)
                series.setdefault(f"{method}_realized_fpr", []).append(
                    nc.realized_fpr)
        self.summary = {
            key: (float(np.mean(vals)), float(np.std(vals)))
            for key, vals in series.items()
        }
        return self.summary


def evaluate_fold(model: Model, val_records: list[FlowRecord],
                  test_records: list[FlowRecord], split: DatasetSplit,
                  reject_configs: dict[str, RejectConfig],
                  fold_id: int = 0) -> FoldOutcome:
    """Calibrate on validation, then measure on the test week."""
    va_p, va_f = transform_batch(val_records, model.scalers, model.ablation)
    known_test = [r for r in test_records if r.label in split.known]
    unknown_test = [r for r in test_records if r.label in split.unknown]
    kt_p, kt_f = transform_batch(known_test, model.scalers, model.ablation)
    ut_p, ut_f = transform_batch(unknown_test, model.scalers, model.ablation)

    known_logits = eval_logits(model.network, kt_p, kt_f)
    predictions = [model.classes[i] for i in known_logits.argmax(axis=1)]
    metrics = classification_metrics(
        predictions, [r.label for r in known_test], model.taxonomy, fold_id)

    nc: dict[str, NcReport] = {}
    for method, config in reject_configs.items():
        _, val_scores = score_model(model, va_p, va_f, config)
        threshold = calibrate_threshold(val_scores, config.target_fpr)
        _, known_scores = score_model(model, kt_p, kt_f, config)
        _, unknown_scores = score_model(model, ut_p, ut_f, config)
        nc[method] = NcReport(
            method=method,
            threshold=threshold,
            tpr_calibrated=float(np.mean(unknown_scores > threshold)),
            tpr_exact=tpr_at_fpr(known_scores, unknown_scores,
                                 config.target_fpr),
            pauroc=pauroc(known_scores, unknown_scores),
            realized_fpr=float(np.mean(known_scores > threshold)),
            target_fpr=config.target_fpr,
            fold_id=fold_id,
        )
    return FoldOutcome(metrics=metrics, nc=nc, val_accuracy=0.0)


def run_protocol(week1: list[FlowRecord], week2: list[FlowRecord],
                 taxonomy: ServiceTaxonomy,
                 topology_for: Callable[[int], NetTopology],
                 train_config: TrainConfig,
                 reject_configs: dict[str, RejectConfig] | None = None,
                 top_n: int | None = None,
                 folds: int = 10,
                 val_fraction: float = 0.1,
                 ablation: AblationConfig | None = None) -> ProtocolReport:
    """Cross-validated train-on-week-1, test-on-week-2 protocol.

    Services with fewer than 100 week-1 samples are dropped before the
    known/unknown split. Each fold reshuffles the week-1 traffic into
    its own train/validation split; week 2 is shared by all folds and
    never trains anything.
    """
    counts: dict[str, int] = {}
    for record in week1:
        if record.label is None:
            raise ValueError("week-1 record without a label")
        counts[record.label] = counts.get(record.label, 0) + 1
    eligible = [s for s in taxonomy.services
                if counts.get(s, 0) >= MIN_SAMPLES_PER_SERVICE]
    taxonomy = ServiceTaxonomy(
        services=eligible,
        group_of={s: taxonomy.group_of[s] for s in eligible},
        patterns=[(p, s) for p, s in taxonomy.patterns if s in eligible],
    )
    if top_n is None:
        top_n = len(eligible)
    split = build_split(taxonomy, {s: counts[s] for s in eligible}, top_n)
    classes = sorted(split.known)

    known_week1 = [r for r in week1 if r.label in split.known]
    week2 = [r for r in week2 if r.label in set(eligible)]
    if reject_configs is None:
        reject_configs = {m: RejectConfig(method=m) for m in METHODS}

    report = ProtocolReport(folds=[], split=split)
    for fold in range(folds):
        fold_seed = train_config.seed + fold
        rng = np.random.default_rng(fold_seed)
        order = rng.permutation(len(known_week1))
        n_val = max(1, int(round(len(order) * val_fraction)))
        val_records = [known_week1[i] for i in order[:n_val]]
        train_records = [known_week1[i] for i in order[n_val:]]
        fold_config = TrainConfig(**{**train_config.to_dict(), "seed": fold_seed})
        model, val_acc = fit_model(
            train_records, val_records, classes, taxonomy,
            topology_for(len(classes)), fold_config, ablation)
        outcome = evaluate_fold(model, val_records, week2, split,
                                reject_configs, fold_id=fold)
        outcome.val_accuracy = val_acc
        report.folds.append(outcome)
    report.summarize()
    return report


# ---------------------------------------------------------------------------
# Report emission


def emit_reports(report: MetricReport, nc_reports: list[NcReport],
                 out_dir: str | os.PathLike) -> list[str]:
    """Write classification/NC CSVs, the aligned text report, and the
    per-class prediction-distribution tables. Returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    out = str(out_dir)
    written: list[str] = []

    path = os.path.join(out, "report_classification.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["CLASS", "PRECISION", "RECALL", "F1",
                         "PRECISION_SC", "RECALL_SC", "F1_SC", "SUPPORT"])
        for service in sorted(report.per_class):
            m = report.per_class[service]
            writer.writerow([service, repr(m.precision), repr(m.recall),
                             repr(m.f1), repr(m.precision_sc),
                             repr(m.recall_sc), repr(m.f1_sc), m.support])
        writer.writerow(["__accuracy__", repr(report.accuracy), "", "",
                         repr(report.superclass_accuracy), "", "", ""])
        writer.writerow(["__macro_f1__", "", "", repr(report.macro_f1),
                         "", "", repr(report.superclass_macro_f1), ""])
    written.append(path)

    path = os.path.join(out, "report_classification.txt")
    with open(path, "w") as fh:
        fh.write(f"{'':>22}{'precision (sc)':>18}{'recall (sc)':>18}"
                 f"{'f1-score (sc)':>18}\n")
        for service in sorted(report.per_class):
            m = report.per_class[service]
            fh.write(
                f"{service:>22}"
                f"{m.precision:>8.2f} ({m.precision_sc:.2f})"
                f"{m.recall:>8.2f} ({m.recall_sc:.2f})"
                f"{m.f1:>8.2f} ({m.f1_sc:.2f})\n")
        fh.write(f"\n{'macro avg':>22}{report.macro_f1:>12.3f} "
                 f"({report.superclass_macro_f1:.3f})\n")
        fh.write(f"{'accuracy':>22}{report.accuracy:>12.3f}\n")
        fh.write(f"{'superclass accuracy':>22}{report.superclass_accuracy:>12.3f}\n")
    written.append(path)

    if nc_reports:
        path = os.path.join(out, "report_nc.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["METHOD", "THRESHOLD", "TPR_CALIBRATED",
                             "TPR_EXACT", "PAUROC", "REALIZED_FPR",
                             "TARGET_FPR", "FOLD"])
            for nc in nc_reports:
                writer.writerow([nc.method, repr(nc.threshold),
                                 repr(nc.tpr_calibrated), repr(nc.tpr_exact),
                                 repr(nc.pauroc), repr(nc.realized_fpr),
                                 repr(nc.target_fpr), nc.fold_id])
        written.append(path)

    # Prediction-distribution tables: for each true class, the fraction
    # of its samples routed to each predicted class, largest first.
    by_true: dict[str, dict[str, int]] = {}
    for (true, pred), count in report.confusion.items():
        by_true.setdefault(true, {})[pred] = count
    for true, routed in sorted(by_true.items()):
        total = sum(routed.values())
        path = os.path.join(out, f"sankey_{true}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["PREDICTED", "FRACTION", "COUNT"])
            ordered = sorted(routed.items(), key=lambda kv: (-kv[1], kv[0]))
            for pred, count in ordered:
                writer.writerow([pred, repr(count / total), count])
        written.append(path)
    return written


def read_classification_report(path: str | os.PathLike
                               ) -> dict[str, ClassMetrics]:
    """Parse report_classification.csv back into per-class metrics."""
    out: dict[str, ClassMetrics] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            name = row["CLASS"]
            if name.startswith("__"):
                continue
            out[name] = ClassMetrics(
                precision=float(row["PRECISION"]),
                recall=float(row["RECALL"]),
                f1=float(row["F1"]),
                precision_sc=float(row["PRECISION_SC"]),
                recall_sc=float(row["RECALL_SC"]),
                f1_sc=float(row["F1_SC"]),
                support=int(row["SUPPORT"]),
            )
    return out
