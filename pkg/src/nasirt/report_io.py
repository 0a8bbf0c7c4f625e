"""Versioned, diffable file formats for matrices, parameters, reports and
plot-ready series.

Every file opens with a ``# format_version=N`` comment line. Numeric fields
are serialized at 12 significant digits so re-emission is byte-identical on
any platform. Readers fail loudly with the offending line number.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import DataFormatError
from .irt import FitResult, ItemParameterSet, ResponseMatrix, RESPONDENT_KINDS
from .pipeline import ModelRecord, RoutingResult, BinOutcome, RunReport
from .zoo import HyperParams, PredictionVector

__all__ = [
    "FORMAT_VERSION",
    "PlotSeries",
    "fmt",
    "write_response_matrix",
    "read_response_matrix",
    "write_predictions",
    "read_predictions",
    "write_item_parameters",
    "write_respondent_parameters",
    "emit_item_scatter",
    "emit_ability_accuracy",
    "emit_bin_histogram",
    "write_plot_series",
    "write_zoo_manifest",
    "report_to_dict",
    "report_from_dict",
    "write_reports_json",
    "read_reports_json",
    "SUMMARY_COLUMNS",
    "write_summary_csv",
    "write_complexity_csv",
]

FORMAT_VERSION = 1

_VERSION_LINE = f"# format_version={FORMAT_VERSION}"

SUMMARY_COLUMNS = ("fold", "irt_difficulty", "irt_discrimination",
                   "voting_irt_rank", "single_cnn", "voting_all")

COMPLEXITY_COLUMNS = ("dataset", "irt_rank_params", "single_cnn_params",
                      "voting_all_params")


def fmt(x) -> str:
    """Fixed 12-significant-digit rendering for floats; ints stay exact."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def _open_versioned(path):
    fh = open(path, newline="", encoding="utf-8")
    first = fh.readline().rstrip("\n")
    if not first.startswith("# format_version="):
        fh.close()
        raise DataFormatError(f"{path}: missing format_version header")
    version = first.split("=", 1)[1]
    if version != str(FORMAT_VERSION):
        fh.close()
        raise DataFormatError(f"{path}: unsupported format_version {version}")
    return fh


def write_response_matrix(rm: ResponseMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_VERSION_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(["respondent_id", "kind", *rm.item_ids])
        for rid, kind, row in zip(rm.respondent_ids, rm.respondent_kinds,
                                  rm.correctness):
            writer.writerow([rid, kind, *(str(int(v)) for v in row)])


def read_response_matrix(path) -> ResponseMatrix:
    fh = _open_versioned(path)
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 4 or header[:2] != [
                "respondent_id", "kind"]:
            raise DataFormatError(
                f"{path}: header must be respondent_id,kind,<item ids>"
            )
        item_ids = tuple(header[2:])
        ids, kinds, rows = [], [], []
        for lineno, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {len(header)} fields, "
                    f"got {len(row)}"
                )
            if row[1] not in RESPONDENT_KINDS:
                raise DataFormatError(
                    f"{path}: line {lineno}: unknown kind {row[1]!r}"
                )
            values = []
            for v in row[2:]:
                if v not in ("0", "1"):
                    raise DataFormatError(
                        f"{path}: line {lineno}: response must be 0 or 1, "
                        f"got {v!r}"
                    )
                values.append(int(v))
            ids.append(row[0])
            kinds.append(row[1])
            rows.append(values)
        if not rows:
            raise DataFormatError(f"{path}: no respondent rows")
    return ResponseMatrix(
        correctness=np.asarray(rows, dtype=np.int8),
        respondent_ids=tuple(ids),
        respondent_kinds=tuple(kinds),
        item_ids=item_ids,
    )


def write_predictions(predictions, item_ids, path) -> None:
    """One row per (respondent, instance): hard class plus the K class
    probabilities."""
    predictions = list(predictions)
    if not predictions:
        raise ValueError("no predictions to write")
    k = predictions[0].probabilities.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_VERSION_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(["respondent_id", "instance_id", "predicted_class",
                         *(f"p{i}" for i in range(k))])
        for pv in predictions:
            if pv.n_instances != len(item_ids):
                raise ValueError(
                    f"model {pv.model_id!r} predictions do not cover the "
                    "instance ids"
                )
            for iid, cls, probs in zip(item_ids, pv.classes,
                                       pv.probabilities):
                writer.writerow([pv.model_id, iid, str(int(cls)),
                                 *(fmt(p) for p in probs)])


def read_predictions(path):
    """Returns (predictions, item_ids); item order follows the first model's
    rows and every model must cover exactly the same instances."""
    fh = _open_versioned(path)
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if (header is None or len(header) < 4
                or header[:3] != ["respondent_id", "instance_id",
                                  "predicted_class"]):
            raise DataFormatError(f"{path}: malformed predictions header")
        k = len(header) - 3
        per_model: dict[str, list] = {}
        order: list[str] = []
        for lineno, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {len(header)} fields"
                )
            mid, iid = row[0], row[1]
            try:
                cls = int(row[2])
                probs = [float(v) for v in row[3:]]
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}: malformed numeric field"
                ) from None
            if mid not in per_model:
                per_model[mid] = []
                order.append(mid)
            per_model[mid].append((iid, cls, probs))
        if not per_model:
            raise DataFormatError(f"{path}: no prediction rows")
    first = order[0]
    item_ids = tuple(iid for iid, _, _ in per_model[first])
    predictions = []
    for mid in order:
        rows = per_model[mid]
        if tuple(iid for iid, _, _ in rows) != item_ids:
            raise DataFormatError(
                f"{path}: model {mid!r} does not cover the same instances "
                f"as {first!r}"
            )
        classes = np.array([cls for _, cls, _ in rows], dtype=np.int64)
        probs = np.array([p for _, _, p in rows], dtype=np.float64)
        if probs.shape[1] != k:
            raise DataFormatError(f"{path}: inconsistent class count")
        predictions.append(PredictionVector(model_id=mid, classes=classes,
                                            probabilities=probs))
    return predictions, item_ids


def write_item_parameters(items: ItemParameterSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_VERSION_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(["item_id", "a", "b", "c", "a_norm", "b_norm"])
        a_norm = items.a_norm if items.a_norm is not None else [""] * items.n_items
        b_norm = items.b_norm if items.b_norm is not None else [""] * items.n_items
        for i, iid in enumerate(items.item_ids):
            writer.writerow([
                iid, fmt(items.a[i]), fmt(items.b[i]), fmt(items.c[i]),
                fmt(a_norm[i]) if a_norm[i] != "" else "",
                fmt(b_norm[i]) if b_norm[i] != "" else "",
            ])


def write_respondent_parameters(fit: FitResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_VERSION_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(["respondent_id", "kind", "theta", "posterior_sd",
                         "true_score"])
        ab = fit.abilities
        for i, rid in enumerate(ab.respondent_ids):
            writer.writerow([
                rid, fit.respondent_kinds[i], fmt(ab.theta[i]),
                fmt(ab.posterior_sd[i]), fmt(fit.true_scores[i]),
            ])


@dataclass(frozen=True)
class PlotSeries:
    """Rows of plot-ready values with a fixed, kind-specific column schema."""

    kind: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]


def emit_item_scatter(items: ItemParameterSet) -> PlotSeries:
    """One (difficulty, discrimination) point per test instance."""
    if items.a_norm is None or items.b_norm is None:
        raise ValueError("item parameters must be normalized first")
    rows = tuple(
        (iid, float(items.b_norm[i]), float(items.a_norm[i]))
        for i, iid in enumerate(items.item_ids)
    )
    return PlotSeries(kind="difficulty_vs_discrimination",
                      columns=("item_id", "b_norm", "a_norm"), rows=rows)


def emit_ability_accuracy(fit: FitResult, rm: ResponseMatrix) -> PlotSeries:
    """One (theta, accuracy) point per respondent, artificials tagged by
    their kind."""
    if fit.abilities.respondent_ids != rm.respondent_ids:
        raise ValueError("fit and response matrix respondents differ")
    accuracies = rm.row_accuracies()
    rows = tuple(
        (rid, fit.respondent_kinds[i], float(fit.abilities.theta[i]),
         float(accuracies[i]))
        for i, rid in enumerate(rm.respondent_ids)
    )
    return PlotSeries(kind="ability_vs_accuracy",
                      columns=("respondent_id", "kind", "theta", "accuracy"),
                      rows=rows)


def emit_bin_histogram(report: RunReport) -> PlotSeries:
    """One bar per routed bin: parameter range, routed model, accuracy."""
    rows = []
    for routing in report.routing:
        for index, outcome in enumerate(routing.bins):
            rows.append((routing.kind, index, outcome.lo, outcome.hi,
                         outcome.model_id, outcome.accuracy,
                         outcome.n_instances))
    return PlotSeries(
        kind="bin_histogram",
        columns=("routing", "bin_index", "range_lo", "range_hi", "model_id",
                 "accuracy", "instance_count"),
        rows=tuple(rows),
    )


def write_plot_series(series: PlotSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_VERSION_LINE + "\n")
        fh.write(f"# kind={series.kind}\n")
        writer = csv.writer(fh)
        writer.writerow(series.columns)
        for row in series.rows:
            writer.writerow([
                fmt(v) if isinstance(v, (float, np.floating)) else str(v)
                for v in row
            ])


def _hp_to_dict(hp: HyperParams | None):
    return None if hp is None else asdict(hp)


def write_zoo_manifest(records, path) -> None:
    """Per-model training manifest: grid index, hyperparameters, seed,
    parameter count and loss curve."""
    payload = {
        "format_version": FORMAT_VERSION,
        "models": [
            {
                "model_id": r.model_id,
                "grid_index": r.grid_index,
                "hyperparams": _hp_to_dict(r.hyperparams),
                "seed": r.seed,
                "param_count": r.param_count,
                "loss_curve": [float(v) for v in r.loss_curve],
                "test_accuracy": r.test_accuracy,
            }
            for r in records
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def report_to_dict(report: RunReport) -> dict:
    return {
        "fold_ratio": report.fold_ratio,
        "run_index": report.run_index,
        "split_seed": report.split_seed,
        "zoo_size": report.zoo_size,
        "rank_size": report.rank_size,
        "routing": [
            {
                "kind": r.kind,
                "consolidated_accuracy": r.consolidated_accuracy,
                "bins": [
                    {
                        "model_id": o.model_id,
                        "lo": o.lo,
                        "hi": o.hi,
                        "n_instances": o.n_instances,
                        "n_correct": o.n_correct,
                        "accuracy": o.accuracy,
                    }
                    for o in r.bins
                ],
            }
            for r in report.routing
        ],
        "vote_rank_accuracy": report.vote_rank_accuracy,
        "vote_all_accuracy": report.vote_all_accuracy,
        "single_cnn_accuracy": report.single_cnn_accuracy,
        "best_zoo_accuracy": report.best_zoo_accuracy,
        "rank_model_ids": list(report.rank_model_ids),
        "rank_param_total": report.rank_param_total,
        "vote_all_param_total": report.vote_all_param_total,
        "single_param_count": report.single_param_count,
        "fit_converged": report.fit_converged,
    }


def report_from_dict(data: dict) -> RunReport:
    routing = tuple(
        RoutingResult(
            kind=r["kind"],
            consolidated_accuracy=r["consolidated_accuracy"],
            bins=tuple(
                BinOutcome(model_id=o["model_id"], lo=o["lo"], hi=o["hi"],
                           n_instances=o["n_instances"],
                           n_correct=o["n_correct"])
                for o in r["bins"]
            ),
        )
        for r in data["routing"]
    )
    return RunReport(
        fold_ratio=data["fold_ratio"],
        run_index=data["run_index"],
        split_seed=data["split_seed"],
        zoo_size=data["zoo_size"],
        rank_size=data["rank_size"],
        routing=routing,
        vote_rank_accuracy=data["vote_rank_accuracy"],
        vote_all_accuracy=data["vote_all_accuracy"],
        single_cnn_accuracy=data["single_cnn_accuracy"],
        best_zoo_accuracy=data["best_zoo_accuracy"],
        rank_model_ids=tuple(data["rank_model_ids"]),
        rank_param_total=data["rank_param_total"],
        vote_all_param_total=data["vote_all_param_total"],
        single_param_count=data["single_param_count"],
        fit_converged=data["fit_converged"],
    )


def write_reports_json(reports, path) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "reports": [report_to_dict(r) for r in reports],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_reports_json(path) -> list[RunReport]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported format_version")
    return [report_from_dict(d) for d in payload["reports"]]


def _write_table(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_VERSION_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([
                "" if row[col] is None
                else (fmt(row[col]) if isinstance(row[col], (int, float,
                                                             np.floating,
                                                             np.integer))
                      else str(row[col]))
                for col in columns
            ])


def write_summary_csv(summary_rows, path) -> None:
    """Accuracy table mirroring the method/baseline column order."""
    _write_table(path, SUMMARY_COLUMNS, summary_rows)


def write_complexity_csv(rows, path) -> None:
    """Parameter-count table; one row per dataset."""
    if isinstance(rows, dict):
        rows = [rows]
    _write_table(path, COMPLEXITY_COLUMNS, rows)
