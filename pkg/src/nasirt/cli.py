"""Command-line entry point.

Subcommands: ``synth`` (write a synthetic dataset), ``run`` (the full
pipeline), ``irt-fit`` (standalone calibration of a response-matrix file),
``baseline`` (benchmark single CNN and whole-zoo voting only) and ``report``
(re-render summary tables from saved reports).

Every ``run`` writes into a config-hash-named directory so identical
configurations land in identical paths with byte-identical contents. Flags
win over ``--config`` file values; usage errors never leave partial output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import report_io
from .data import (
    DataFormatError,
    SpectralDataset,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    split,
    write_csv,
)
from .irt import FitConfig, SingularityError, fit_3pl, normalize
from .pipeline import (
    PipelineError,
    RunConfig,
    build_response_matrix,
    complexity_summary,
    majority_vote,
    run_nasirt,
    summarize,
)
from .zoo import (
    GRID_PRESETS,
    HyperParams,
    TrainConfig,
    benchmark_cnn,
    expand_grid,
    predict_dataset,
    train,
)

OUTPUT_DIR_ENV = "NASIRT_OUT"

_SYNTH_KEYS = ("classes", "per_class", "features", "peaks", "peak_width",
               "noise", "seed")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (DataFormatError, SingularityError, PipelineError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nasirt",
        description="Response-model-guided routing over a grid of 1-D CNN "
                    "spectral classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a synthetic dataset CSV")
    synth.add_argument("--classes", type=int, required=True)
    synth.add_argument("--per-class", type=int, required=True)
    synth.add_argument("--features", type=int, required=True)
    synth.add_argument("--peaks", type=int, default=4)
    synth.add_argument("--peak-width", type=float, default=10.0)
    synth.add_argument("--noise", type=float, default=0.5)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    run = sub.add_parser("run", help="execute the full pipeline")
    _add_dataset_args(run)
    run.add_argument("--config", help="JSON config file; flags win")
    run.add_argument("--grid", default=None,
                     help="grid preset (full|reduced) or a JSON grid file")
    run.add_argument("--folds", default=None,
                     help="comma-separated train ratios, e.g. 0.9,0.75,0.5")
    run.add_argument("--runs", type=int, default=None,
                     help="bootstrap runs per fold")
    run.add_argument("--rank-size", type=int, default=None)
    run.add_argument("--routing", default=None,
                     help="comma-separated kinds from "
                          "{difficulty,discrimination}")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--epochs", type=int, default=None)
    run.add_argument("--batch-size", type=int, default=None)
    run.add_argument("--learning-rate", type=float, default=None)
    run.add_argument("--bench-epochs", type=int, default=None,
                     help="epochs for the single-CNN baseline "
                          "(defaults to --epochs)")
    run.add_argument("--no-single-cnn", action="store_true",
                     help="skip the single-CNN baseline")
    run.add_argument("--predictions", default=None,
                     help="predictions CSV from an externally trained zoo; "
                          "skips training")
    run.add_argument("--jobs", type=int, default=None,
                     help="parallel training workers (default: CPU count)")
    run.add_argument("--out-dir", default=None)
    run.set_defaults(func=cmd_run)

    fit = sub.add_parser("irt-fit", help="calibrate a response-matrix file")
    fit.add_argument("--matrix", required=True)
    fit.add_argument("--waive-singularity-guard", action="store_true",
                     help="fit even when a constant item column exists "
                          "without artificial respondents")
    fit.add_argument("--out-dir", default=None)
    fit.set_defaults(func=cmd_irt_fit)

    base = sub.add_parser("baseline",
                          help="benchmark single CNN and whole-zoo voting")
    _add_dataset_args(base)
    base.add_argument("--ratio", type=float, default=0.9)
    base.add_argument("--seed", type=int, default=0)
    base.add_argument("--grid", default="reduced")
    base.add_argument("--epochs", type=int, default=None)
    base.add_argument("--batch-size", type=int, default=None)
    base.add_argument("--learning-rate", type=float, default=None)
    base.add_argument("--skip-single", action="store_true")
    base.add_argument("--skip-vote-all", action="store_true")
    base.add_argument("--out-dir", default=None)
    base.set_defaults(func=cmd_baseline)

    rep = sub.add_parser("report", help="re-render tables from saved reports")
    rep.add_argument("--run-dir", required=True)
    rep.set_defaults(func=cmd_report)
    return parser


def _add_dataset_args(sub) -> None:
    sub.add_argument("--dataset", default=None, help="dataset CSV path")
    sub.add_argument("--synth-classes", type=int, default=None)
    sub.add_argument("--synth-per-class", type=int, default=None)
    sub.add_argument("--synth-features", type=int, default=None)
    sub.add_argument("--synth-peaks", type=int, default=4)
    sub.add_argument("--synth-peak-width", type=float, default=10.0)
    sub.add_argument("--synth-noise", type=float, default=0.5)
    sub.add_argument("--synth-seed", type=int, default=0)


def cmd_synth(args, parser) -> int:
    try:
        spec = SyntheticSpec(
            n_classes=args.classes, instances_per_class=args.per_class,
            feature_count=args.features, peaks_per_class=args.peaks,
            peak_width=args.peak_width, noise_sigma=args.noise,
            seed=args.seed,
        )
    except ValueError as exc:
        parser.error(str(exc))
    ds = generate_synthetic(spec)
    write_csv(ds, args.out)
    print(f"wrote {ds.n_instances} instances x {ds.feature_count} features "
          f"({ds.n_classes} classes) to {args.out}")
    return 0


def _load_dataset(args, parser) -> tuple[SpectralDataset, dict]:
    """Resolve the mutually exclusive dataset sources and describe the
    choice for the config hash."""
    synth_given = args.synth_classes is not None
    if args.dataset and synth_given:
        parser.error("--dataset and --synth-* options are mutually exclusive")
    if args.dataset:
        if not os.path.exists(args.dataset):
            parser.error(f"dataset file not found: {args.dataset}")
        return load_csv(args.dataset), {"dataset": str(args.dataset)}
    if not synth_given:
        parser.error("either --dataset or --synth-classes/... is required")
    for field in ("synth_per_class", "synth_features"):
        if getattr(args, field) is None:
            parser.error(f"--{field.replace('_', '-')} is required with "
                         "--synth-classes")
    try:
        spec = SyntheticSpec(
            n_classes=args.synth_classes,
            instances_per_class=args.synth_per_class,
            feature_count=args.synth_features,
            peaks_per_class=args.synth_peaks,
            peak_width=args.synth_peak_width,
            noise_sigma=args.synth_noise,
            seed=args.synth_seed,
        )
    except ValueError as exc:
        parser.error(str(exc))
    desc = {"synthetic": {k: getattr(args, f"synth_{k}") for k in
                          ("classes", "per_class", "features", "peaks",
                           "peak_width", "noise", "seed")}}
    return generate_synthetic(spec), desc


def _resolve(flag, config: dict, key: str, default):
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _parse_grid(value, parser):
    if value in GRID_PRESETS:
        return value, value
    path = Path(value)
    if not path.exists():
        parser.error(f"grid preset or file not found: {value}")
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if isinstance(payload, dict):
        combos = expand_grid({k: tuple(v) for k, v in payload.items()})
    elif isinstance(payload, list):
        combos = [HyperParams(**d) for d in payload]
    else:
        parser.error(f"{value}: grid file must be a domain map or a list")
    return tuple(combos), str(value)


def _out_root(flag) -> Path:
    return Path(flag or os.environ.get(OUTPUT_DIR_ENV, "nasirt-out"))


def _config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def cmd_run(args, parser) -> int:
    config = {}
    if args.config:
        if not os.path.exists(args.config):
            parser.error(f"config file not found: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            config = json.load(fh)

    ds, source_desc = _load_dataset(args, parser)

    folds_raw = _resolve(args.folds, config, "folds", "0.9,0.75,0.5")
    if isinstance(folds_raw, str):
        try:
            fold_ratios = tuple(float(v) for v in folds_raw.split(","))
        except ValueError:
            parser.error(f"cannot parse --folds {folds_raw!r}")
    else:
        fold_ratios = tuple(float(v) for v in folds_raw)
    routing_raw = _resolve(args.routing, config, "routing",
                           "difficulty,discrimination")
    routing = (tuple(routing_raw.split(","))
               if isinstance(routing_raw, str) else tuple(routing_raw))
    grid_value = _resolve(args.grid, config, "grid", "reduced")
    grid, grid_desc = _parse_grid(grid_value, parser)

    epochs = _resolve(args.epochs, config, "epochs", 30)
    batch = _resolve(args.batch_size, config, "batch_size", 32)
    lr = _resolve(args.learning_rate, config, "learning_rate", 1e-3)
    bench_epochs = _resolve(args.bench_epochs, config, "bench_epochs", epochs)
    seed = _resolve(args.seed, config, "seed", 0)
    runs = _resolve(args.runs, config, "runs", 3)
    rank_size = _resolve(args.rank_size, config, "rank_size", 5)
    jobs = _resolve(args.jobs, config, "jobs", os.cpu_count() or 1)
    include_single = not (args.no_single_cnn
                          or config.get("no_single_cnn", False))

    try:
        train_cfg = TrainConfig(epochs=epochs, batch_size=batch,
                                learning_rate=lr, seed=seed)
        bench_cfg = replace(train_cfg, epochs=bench_epochs)
        run_cfg = RunConfig(
            fold_ratios=fold_ratios, n_bootstrap=runs, grid=grid,
            rank_size=rank_size, routing_kinds=routing, seed=seed,
            train=train_cfg, bench_train=bench_cfg,
            include_single_cnn=include_single, jobs=max(1, jobs),
        )
    except ValueError as exc:
        parser.error(str(exc))

    external = None
    external_ids = None
    if args.predictions:
        if not os.path.exists(args.predictions):
            parser.error(f"predictions file not found: {args.predictions}")
        external, external_ids = report_io.read_predictions(args.predictions)

    hash_payload = {
        "source": source_desc,
        "grid": grid_desc,
        "folds": list(fold_ratios),
        "runs": runs,
        "rank_size": rank_size,
        "routing": list(routing),
        "seed": seed,
        "epochs": epochs,
        "batch_size": batch,
        "learning_rate": lr,
        "bench_epochs": bench_epochs,
        "single_cnn": include_single,
        "predictions": str(args.predictions) if args.predictions else None,
    }
    run_dir = _out_root(args.out_dir) / f"run-{_config_hash(hash_payload)}"

    results = run_nasirt(ds, run_cfg, external_predictions=external,
                         external_item_ids=external_ids)

    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(hash_payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    reports = [r.report for r in results]
    for result in results:
        rep = result.report
        sub = run_dir / f"fold{rep.fold_ratio:g}-run{rep.run_index}"
        sub.mkdir(parents=True, exist_ok=True)
        _write_run_artifacts(result, sub)
    report_io.write_reports_json(reports, run_dir / "reports.json")
    report_io.write_summary_csv(summarize(reports), run_dir / "summary.csv")
    report_io.write_complexity_csv(
        complexity_summary(reports, source_desc.get("dataset", "synthetic")),
        run_dir / "complexity.csv")
    _print_summary(summarize(reports))
    print(f"run artifacts in {run_dir}")
    return 0


def _write_run_artifacts(result, directory: Path) -> None:
    rep = result.report
    report_io.write_reports_json([rep], directory / "report.json")
    report_io.write_response_matrix(result.response_matrix,
                                    directory / "response_matrix.csv")
    report_io.write_predictions(result.predictions, result.test_item_ids,
                                directory / "predictions.csv")
    report_io.write_item_parameters(result.items, directory / "items.csv")
    report_io.write_respondent_parameters(result.fit,
                                          directory / "respondents.csv")
    if any(r.loss_curve for r in result.records):
        report_io.write_zoo_manifest(result.records,
                                     directory / "zoo_manifest.json")
    report_io.write_plot_series(report_io.emit_item_scatter(result.items),
                                directory / "plot_item_scatter.csv")
    report_io.write_plot_series(
        report_io.emit_ability_accuracy(result.fit, result.response_matrix),
        directory / "plot_ability_accuracy.csv")
    report_io.write_plot_series(report_io.emit_bin_histogram(rep),
                                directory / "plot_bin_histogram.csv")


def cmd_irt_fit(args, parser) -> int:
    if not os.path.exists(args.matrix):
        parser.error(f"matrix file not found: {args.matrix}")
    rm = report_io.read_response_matrix(args.matrix)
    cfg = FitConfig(waive_singularity_guard=args.waive_singularity_guard)
    fit = fit_3pl(rm, cfg)
    items = normalize(fit.items)
    fit = replace(fit, items=items)
    out = _out_root(args.out_dir) / f"irtfit-{_config_hash(_irt_payload(args))}"
    out.mkdir(parents=True, exist_ok=True)
    report_io.write_item_parameters(items, out / "items.csv")
    report_io.write_respondent_parameters(fit, out / "respondents.csv")
    status = "converged" if fit.converged else "did not converge"
    print(f"fit {status} after {fit.n_iter} iterations; "
          f"exports in {out}")
    return 0


def _irt_payload(args) -> dict:
    return {"matrix": str(args.matrix),
            "waive": bool(args.waive_singularity_guard)}


def cmd_baseline(args, parser) -> int:
    ds, source_desc = _load_dataset(args, parser)
    if args.skip_single and args.skip_vote_all:
        parser.error("nothing to do: both baselines skipped")
    try:
        train_cfg = TrainConfig(
            epochs=args.epochs if args.epochs is not None else 30,
            batch_size=args.batch_size if args.batch_size is not None else 32,
            learning_rate=(args.learning_rate
                           if args.learning_rate is not None else 1e-3),
            seed=args.seed,
        )
        fold = split(ds, args.ratio, args.seed)
    except ValueError as exc:
        parser.error(str(exc))
    grid, grid_desc = _parse_grid(args.grid, parser)

    x_train = ds.spectra[fold.train_indices]
    y_train = ds.labels[fold.train_indices]
    x_test = ds.spectra[fold.test_indices]
    y_test = ds.labels[fold.test_indices]

    single_acc = None
    if not args.skip_single:
        bench = benchmark_cnn(ds.feature_count, ds.n_classes, args.seed)
        train(bench, x_train, y_train, train_cfg)
        single_acc = float((bench.predict(x_test) == y_test).mean())

    vote_acc = None
    if not args.skip_vote_all:
        from .zoo import build as build_model
        hps = expand_grid(GRID_PRESETS[grid]) if isinstance(grid, str) \
            else list(grid)
        preds = []
        for gi, hp in enumerate(hps):
            model = build_model(hp, ds.feature_count, ds.n_classes,
                                args.seed + gi)
            train(model, x_train, y_train,
                  replace(train_cfg, seed=args.seed + gi))
            preds.append(predict_dataset(model, x_test, f"m{gi:03d}"))
        vote_acc = majority_vote(preds, y_test, ds.n_classes)

    row = {
        "fold": f"{round(args.ratio * 100)}/{100 - round(args.ratio * 100)}%",
        "irt_difficulty": None,
        "irt_discrimination": None,
        "voting_irt_rank": None,
        "single_cnn": single_acc,
        "voting_all": vote_acc,
    }
    payload = {"source": source_desc, "grid": grid_desc,
               "ratio": args.ratio, "seed": args.seed,
               "epochs": train_cfg.epochs}
    out = _out_root(args.out_dir) / f"baseline-{_config_hash(payload)}"
    out.mkdir(parents=True, exist_ok=True)
    report_io.write_summary_csv([row], out / "baseline_summary.csv")
    _print_summary([row])
    print(f"baseline artifacts in {out}")
    return 0


def cmd_report(args, parser) -> int:
    run_dir = Path(args.run_dir)
    reports_path = run_dir / "reports.json"
    if not reports_path.exists():
        parser.error(f"no reports.json under {run_dir}")
    reports = report_io.read_reports_json(reports_path)
    summary = summarize(reports)
    report_io.write_summary_csv(summary, run_dir / "summary.csv")
    report_io.write_complexity_csv(complexity_summary(reports),
                                   run_dir / "complexity.csv")
    _print_summary(summary)
    return 0


def _print_summary(rows) -> None:
    columns = report_io.SUMMARY_COLUMNS
    widths = [max(len(c), 18) for c in columns]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for row in rows:
        cells = []
        for c, w in zip(columns, widths):
            v = row[c]
            cells.append(("" if v is None
                          else v if isinstance(v, str)
                          else f"{v:.4f}").ljust(w))
        print("  ".join(cells))


if __name__ == "__main__":
    sys.exit(main())
