"""End-to-end orchestration: train the zoo, recode predictions as a response
matrix, inject artificial respondents, fit the response model, rank models by
true score, split the test set into parameter-sorted bins, route each bin to
its ability-matched model, consolidate, and score the baselines.

Routing convention: both the selected model rank and the instance bins are in
ascending order (weakest model first, easiest bin first), and bin k is
classified by rank position k.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import SpectralDataset, bootstrap_runs
from .irt import (
    FitConfig,
    FitResult,
    ItemParameterSet,
    ResponseMatrix,
    fit_3pl,
    normalize,
)
from .zoo import (
    GRID_PRESETS,
    HyperParams,
    NetworkModel,
    PredictionVector,
    TrainConfig,
    benchmark_cnn,
    build,
    expand_grid,
    predict_dataset,
    train,
)

__all__ = [
    "PipelineError",
    "RankEntry",
    "ModelRank",
    "Bin",
    "BinAssignment",
    "BinOutcome",
    "RoutingResult",
    "ModelRecord",
    "RunReport",
    "RunResult",
    "RunConfig",
    "ROUTING_KINDS",
    "N_RANDOM_CLASSIFIERS",
    "build_response_matrix",
    "inject_artificials",
    "select_rank",
    "separate_bins",
    "route_classify",
    "consolidate",
    "majority_vote",
    "majority_vote_classes",
    "run_nasirt",
    "summarize",
    "complexity_summary",
]

ROUTING_KINDS = ("difficulty", "discrimination")
N_RANDOM_CLASSIFIERS = 3

# Seed-derivation stream tags, so each stochastic component draws from its
# own deterministic stream.
_STREAM_SPLIT = 1
_STREAM_MODEL = 2
_STREAM_BENCH = 3
_STREAM_ARTIFICIAL = 4


class PipelineError(RuntimeError):
    """An internal pipeline identity failed or inputs are inconsistent."""


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from an ordered tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class RankEntry:
    model_id: str
    theta: float
    true_score: float


@dataclass(frozen=True)
class ModelRank:
    """The n selected models, ascending by true score: position 0 holds the
    weakest of the selected."""

    entries: tuple[RankEntry, ...]

    def __post_init__(self):
        scores = [e.true_score for e in self.entries]
        if any(s2 < s1 for s1, s2 in zip(scores, scores[1:])):
            raise ValueError("rank entries must ascend by true score")

    def __len__(self) -> int:
        return len(self.entries)

    def model_ids(self) -> list[str]:
        return [e.model_id for e in self.entries]


@dataclass(frozen=True)
class Bin:
    positions: np.ndarray          # indices into the test set, sorted order
    lo: float
    hi: float


@dataclass(frozen=True)
class BinAssignment:
    kind: str
    bins: tuple[Bin, ...]


@dataclass(frozen=True)
class BinOutcome:
    model_id: str
    lo: float
    hi: float
    n_instances: int
    n_correct: int

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_instances


@dataclass(frozen=True)
class RoutingResult:
    kind: str
    bins: tuple[BinOutcome, ...]
    consolidated_accuracy: float


@dataclass(frozen=True)
class ModelRecord:
    """Manifest entry for one trained zoo member."""

    model_id: str
    grid_index: int
    hyperparams: HyperParams | None
    seed: int
    param_count: int
    loss_curve: tuple[float, ...]
    test_accuracy: float


@dataclass(frozen=True)
class RunReport:
    """Everything reported for one fold x bootstrap execution."""

    fold_ratio: float
    run_index: int
    split_seed: int
    zoo_size: int
    rank_size: int
    routing: tuple[RoutingResult, ...]
    vote_rank_accuracy: float
    vote_all_accuracy: float
    single_cnn_accuracy: float | None
    best_zoo_accuracy: float
    rank_model_ids: tuple[str, ...]
    rank_param_total: int
    vote_all_param_total: int
    single_param_count: int | None
    fit_converged: bool

    def routed_accuracy(self, kind: str) -> float | None:
        for r in self.routing:
            if r.kind == kind:
                return r.consolidated_accuracy
        return None


@dataclass(frozen=True)
class RunResult:
    """A report plus the artifacts needed to serialize and plot the run."""

    report: RunReport
    response_matrix: ResponseMatrix
    fit: FitResult
    items: ItemParameterSet
    predictions: tuple[PredictionVector, ...]
    records: tuple[ModelRecord, ...]
    test_item_ids: tuple[str, ...]
    test_labels: np.ndarray


@dataclass(frozen=True)
class RunConfig:
    """Knobs for a full execution; defaults mirror the method's suggested
    protocol (three fold ratios, three bootstrap runs, rank of 5)."""

    fold_ratios: tuple[float, ...] = (0.9, 0.75, 0.5)
    n_bootstrap: int = 3
    grid: str = "reduced"
    rank_size: int = 5
    routing_kinds: tuple[str, ...] = ROUTING_KINDS
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    bench_train: TrainConfig | None = None
    fit: FitConfig = field(default_factory=FitConfig)
    include_single_cnn: bool = True
    jobs: int = 1

    def __post_init__(self):
        if not self.fold_ratios:
            raise ValueError("need at least one fold ratio")
        if self.n_bootstrap < 1:
            raise ValueError("n_bootstrap must be >= 1")
        if self.rank_size < 1:
            raise ValueError("rank_size must be >= 1")
        bad = set(self.routing_kinds) - set(ROUTING_KINDS)
        if bad:
            raise ValueError(f"unknown routing kinds {sorted(bad)}")
        if isinstance(self.grid, str) and self.grid not in GRID_PRESETS:
            raise ValueError(f"unknown grid preset {self.grid!r}")

    def hyperparams(self) -> list[HyperParams]:
        if isinstance(self.grid, str):
            return expand_grid(GRID_PRESETS[self.grid])
        return list(self.grid)


def build_response_matrix(predictions, labels,
                          item_ids) -> ResponseMatrix:
    """Recode hard predictions as correct/incorrect item responses."""
    labels = np.asarray(labels, dtype=np.int64)
    item_ids = tuple(item_ids)
    if labels.shape[0] != len(item_ids):
        raise PipelineError("labels do not align with item ids")
    rows = []
    for pv in predictions:
        if pv.n_instances != len(item_ids):
            short = min(pv.n_instances, len(item_ids))
            missing = item_ids[short] if short < len(item_ids) else "<extra>"
            raise PipelineError(
                f"model {pv.model_id!r} is missing a prediction for "
                f"instance {missing!r} ({pv.n_instances} predictions for "
                f"{len(item_ids)} instances)"
            )
        rows.append((pv.classes == labels).astype(np.int8))
    return ResponseMatrix(
        correctness=np.vstack(rows),
        respondent_ids=tuple(pv.model_id for pv in predictions),
        respondent_kinds=tuple("trained" for _ in predictions),
        item_ids=item_ids,
    )


def inject_artificials(rm: ResponseMatrix, labels, n_classes: int,
                       seed: int) -> ResponseMatrix:
    """Append the five artificial respondents: three uniform-random
    classifiers scored against the ground truth, one optimistic (all
    correct), one pessimistic (all wrong)."""
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != rm.n_items:
        raise PipelineError("labels do not align with the response matrix")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, n_classes, size=(N_RANDOM_CLASSIFIERS, rm.n_items))
    random_rows = (draws == labels[None, :]).astype(np.int8)
    ones = np.ones((1, rm.n_items), dtype=np.int8)
    zeros = np.zeros((1, rm.n_items), dtype=np.int8)
    return ResponseMatrix(
        correctness=np.vstack([rm.correctness, random_rows, ones, zeros]),
        respondent_ids=rm.respondent_ids + tuple(
            f"random{i}" for i in range(N_RANDOM_CLASSIFIERS)
        ) + ("optimistic", "pessimistic"),
        respondent_kinds=rm.respondent_kinds
        + ("random",) * N_RANDOM_CLASSIFIERS + ("optimistic", "pessimistic"),
        item_ids=rm.item_ids,
    )


def select_rank(fit: FitResult, n: int) -> ModelRank:
    """Top-n trained respondents by true score, reordered ascending.

    Artificial respondents are never eligible. Ties select (and place later,
    i.e. toward harder bins) the lower respondent row index.
    """
    if n <= 0:
        raise ValueError("rank size must be positive")
    eligible = [i for i, kind in enumerate(fit.respondent_kinds)
                if kind == "trained"]
    if n > len(eligible):
        raise ValueError(
            f"rank size {n} exceeds {len(eligible)} trained respondents"
        )
    best_first = sorted(eligible,
                        key=lambda i: (-fit.true_scores[i], i))[:n]
    ascending = best_first[::-1]
    ids = fit.abilities.respondent_ids
    return ModelRank(entries=tuple(
        RankEntry(model_id=ids[i], theta=float(fit.abilities.theta[i]),
                  true_score=float(fit.true_scores[i]))
        for i in ascending
    ))


def separate_bins(items: ItemParameterSet, kind: str,
                  n: int) -> BinAssignment:
    """Sort instances ascending by the normalized routing parameter and cut
    into n contiguous near-equal bins, earlier bins taking the remainder.
    Ties in parameter value break by instance id."""
    if kind not in ROUTING_KINDS:
        raise ValueError(f"unknown routing kind {kind!r}")
    values = items.b_norm if kind == "difficulty" else items.a_norm
    if values is None:
        raise ValueError("item parameters must be normalized before binning")
    count = items.n_items
    if n < 1:
        raise ValueError("bin count must be >= 1")
    if n > count:
        raise ValueError(f"bin count {n} exceeds {count} instances")
    order = sorted(range(count),
                   key=lambda i: (values[i], items.item_ids[i]))
    base, remainder = divmod(count, n)
    bins = []
    start = 0
    for k in range(n):
        size = base + (1 if k < remainder else 0)
        chunk = order[start:start + size]
        start += size
        bins.append(Bin(positions=np.asarray(chunk, dtype=np.int64),
                        lo=float(values[chunk[0]]),
                        hi=float(values[chunk[-1]])))
    return BinAssignment(kind=kind, bins=tuple(bins))


def _check_partition(assignment: BinAssignment, n_items: int) -> None:
    sizes = [b.positions.size for b in assignment.bins]
    if max(sizes) - min(sizes) > 1:
        raise PipelineError("bin sizes differ by more than 1")
    merged = np.concatenate([b.positions for b in assignment.bins])
    if not np.array_equal(np.sort(merged), np.arange(n_items)):
        raise PipelineError("bins do not partition the test set")
    los = [b.lo for b in assignment.bins]
    if any(l2 < l1 for l1, l2 in zip(los, los[1:])):
        raise PipelineError("bin parameter ranges are not ascending")


def route_classify(rank: ModelRank, assignment: BinAssignment, labels,
                   predictions_by_id: dict[str, np.ndarray]) -> RoutingResult:
    """Evaluate bin k with rank position k and consolidate.

    Verifies the structural identities on every call: the bins partition the
    test set with sizes differing by at most one, rank scores and bin ranges
    both ascend, and the consolidated accuracy equals an instance-level
    recount of the stitched predictions.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(rank) != len(assignment.bins):
        raise PipelineError(
            f"rank size {len(rank)} != bin count {len(assignment.bins)}"
        )
    _check_partition(assignment, labels.shape[0])
    outcomes = []
    stitched = np.full(labels.shape[0], -1, dtype=np.int64)
    for entry, b in zip(rank.entries, assignment.bins):
        preds = predictions_by_id[entry.model_id]
        stitched[b.positions] = preds[b.positions]
        correct = int((preds[b.positions] == labels[b.positions]).sum())
        outcomes.append(BinOutcome(model_id=entry.model_id, lo=b.lo, hi=b.hi,
                                   n_instances=int(b.positions.size),
                                   n_correct=correct))
    consolidated = consolidate(outcomes)
    recount = int((stitched == labels).sum())
    if recount != sum(o.n_correct for o in outcomes):
        raise PipelineError(
            "consolidated accuracy disagrees with the stitched recount"
        )
    return RoutingResult(kind=assignment.kind, bins=tuple(outcomes),
                         consolidated_accuracy=consolidated)


def consolidate(outcomes) -> float:
    """Total correct over total instances across all bins."""
    total = sum(o.n_instances for o in outcomes)
    if total == 0:
        raise PipelineError("no instances to consolidate")
    return sum(o.n_correct for o in outcomes) / total


def majority_vote_classes(class_rows: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-instance most frequent class; ties resolve to the lowest index."""
    rows = np.asarray(class_rows, dtype=np.int64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("need a (voters, instances) class matrix")
    counts = np.zeros((n_classes, rows.shape[1]), dtype=np.int64)
    for k in range(n_classes):
        counts[k] = (rows == k).sum(axis=0)
    return counts.argmax(axis=0)


def majority_vote(predictions, labels, n_classes: int) -> float:
    """Accuracy of the most-frequent-prediction ensemble."""
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.vstack([pv.classes for pv in predictions])
    voted = majority_vote_classes(rows, n_classes)
    return float((voted == labels).mean())


def _train_one(args):
    """Train one grid member and predict the test set (worker-safe)."""
    (grid_index, hp, x_train, y_train, x_test, feature_count, n_classes,
     seed, train_cfg) = args
    model = build(hp, feature_count, n_classes, seed)
    train(model, x_train, y_train, replace(train_cfg, seed=seed))
    model_id = f"m{grid_index:03d}"
    pv = predict_dataset(model, x_test, model_id)
    return grid_index, pv, model.param_count, tuple(model.loss_curve)


def _train_zoo(hps, x_train, y_train, x_test, feature_count, n_classes,
               cfg: RunConfig, fold_index: int, run_index: int):
    tasks = [
        (gi, hp, x_train, y_train, x_test, feature_count, n_classes,
         derive_seed(cfg.seed, _STREAM_MODEL, fold_index, run_index, gi),
         cfg.train)
        for gi, hp in enumerate(hps)
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_train_one, tasks))
    else:
        results = [_train_one(t) for t in tasks]
    results.sort(key=lambda r: r[0])    # merge deterministically by grid index
    return results


def run_nasirt(ds: SpectralDataset, cfg: RunConfig = RunConfig(),
               external_predictions=None,
               external_item_ids=None) -> list[RunResult]:
    """Execute every fold x bootstrap run and return their results.

    With ``external_predictions`` (a sequence of :class:`PredictionVector`
    plus the matching instance ids), zoo training is skipped: the named
    instances become the single run's test set and the single-CNN baseline
    trains on the complement.
    """
    if external_predictions is not None:
        return [_run_external(ds, cfg, external_predictions,
                              external_item_ids)]
    hps = cfg.hyperparams()
    results = []
    for fold_index, ratio in enumerate(cfg.fold_ratios):
        fold_seed = derive_seed(cfg.seed, _STREAM_SPLIT, fold_index)
        splits = bootstrap_runs(ds, ratio, cfg.n_bootstrap, fold_seed)
        for run_index, fold in enumerate(splits):
            results.append(_run_single(ds, cfg, hps, fold, ratio,
                                       fold_index, run_index))
    return results


def _run_single(ds, cfg, hps, fold, ratio, fold_index, run_index) -> RunResult:
    x_train = ds.spectra[fold.train_indices]
    y_train = ds.labels[fold.train_indices]
    x_test = ds.spectra[fold.test_indices]
    y_test = ds.labels[fold.test_indices]
    item_ids = tuple(ds.instance_ids[i] for i in fold.test_indices)

    zoo = _train_zoo(hps, x_train, y_train, x_test, ds.feature_count,
                     ds.n_classes, cfg, fold_index, run_index)
    predictions = tuple(pv for _, pv, _, _ in zoo)
    records = tuple(
        ModelRecord(
            model_id=pv.model_id, grid_index=gi, hyperparams=hps[gi],
            seed=derive_seed(cfg.seed, _STREAM_MODEL, fold_index, run_index,
                             gi),
            param_count=params, loss_curve=curve,
            test_accuracy=float((pv.classes == y_test).mean()),
        )
        for gi, pv, params, curve in zoo
    )

    single_acc = None
    single_params = None
    if cfg.include_single_cnn:
        bench_cfg = cfg.bench_train if cfg.bench_train is not None else cfg.train
        bench_seed = derive_seed(cfg.seed, _STREAM_BENCH, fold_index,
                                 run_index)
        bench = benchmark_cnn(ds.feature_count, ds.n_classes, bench_seed)
        train(bench, x_train, y_train, replace(bench_cfg, seed=bench_seed))
        single_acc = float((bench.predict(x_test) == y_test).mean())
        single_params = bench.param_count

    art_seed = derive_seed(cfg.seed, _STREAM_ARTIFICIAL, fold_index,
                           run_index)
    return _steps_2_to_9(
        cfg, predictions, records, y_test, item_ids, ds.n_classes, ratio,
        run_index, split_seed=fold.seed, single_acc=single_acc,
        single_params=single_params,
        artificial_seed=art_seed,
    )


def _run_external(ds, cfg, predictions, item_ids) -> RunResult:
    predictions = tuple(predictions)
    if item_ids is None:
        raise PipelineError("external predictions require instance ids")
    item_ids = tuple(item_ids)
    position = {iid: i for i, iid in enumerate(ds.instance_ids)}
    missing = [iid for iid in item_ids if iid not in position]
    if missing:
        raise PipelineError(
            f"predictions name unknown instances, e.g. {missing[0]!r}"
        )
    test_idx = np.array([position[iid] for iid in item_ids], dtype=np.int64)
    y_test = ds.labels[test_idx]
    records = tuple(
        ModelRecord(
            model_id=pv.model_id, grid_index=gi, hyperparams=None, seed=0,
            param_count=0, loss_curve=(),
            test_accuracy=float((pv.classes == y_test).mean()),
        )
        for gi, pv in enumerate(predictions)
    )
    single_acc = None
    single_params = None
    if cfg.include_single_cnn:
        train_mask = np.ones(ds.n_instances, dtype=bool)
        train_mask[test_idx] = False
        x_train = ds.spectra[train_mask]
        y_train = ds.labels[train_mask]
        if x_train.shape[0] == 0:
            raise PipelineError(
                "no training instances left for the single-CNN baseline"
            )
        bench_cfg = cfg.bench_train if cfg.bench_train is not None else cfg.train
        bench_seed = derive_seed(cfg.seed, _STREAM_BENCH, 0, 0)
        bench = benchmark_cnn(ds.feature_count, ds.n_classes, bench_seed)
        train(bench, x_train, y_train, replace(bench_cfg, seed=bench_seed))
        single_acc = float(
            (bench.predict(ds.spectra[test_idx]) == y_test).mean())
        single_params = bench.param_count
    ratio = 1.0 - len(item_ids) / ds.n_instances
    return _steps_2_to_9(
        cfg, predictions, records, y_test, item_ids, ds.n_classes, ratio,
        run_index=0, split_seed=cfg.seed, single_acc=single_acc,
        single_params=single_params,
        artificial_seed=derive_seed(cfg.seed, _STREAM_ARTIFICIAL, 0, 0),
    )


def _steps_2_to_9(cfg, predictions, records, y_test, item_ids, n_classes,
                  ratio, run_index, split_seed, single_acc, single_params,
                  artificial_seed) -> RunResult:
    rm_trained = build_response_matrix(predictions, y_test, item_ids)
    rm = inject_artificials(rm_trained, y_test, n_classes, artificial_seed)
    fit = fit_3pl(rm, cfg.fit)
    items = normalize(fit.items)
    fit = replace(fit, items=items)
    rank = select_rank(fit, cfg.rank_size)

    preds_by_id = {pv.model_id: pv.classes for pv in predictions}
    routing = []
    for kind in cfg.routing_kinds:
        assignment = separate_bins(items, kind, len(rank))
        routing.append(route_classify(rank, assignment, y_test, preds_by_id))

    rank_ids = set(rank.model_ids())
    vote_rank = majority_vote(
        [pv for pv in predictions if pv.model_id in rank_ids],
        y_test, n_classes)
    vote_all = majority_vote(predictions, y_test, n_classes)

    by_id = {r.model_id: r for r in records}
    rank_params = sum(by_id[mid].param_count for mid in rank.model_ids())
    all_params = sum(r.param_count for r in records)
    report = RunReport(
        fold_ratio=ratio,
        run_index=run_index,
        split_seed=split_seed,
        zoo_size=len(predictions),
        rank_size=len(rank),
        routing=tuple(routing),
        vote_rank_accuracy=vote_rank,
        vote_all_accuracy=vote_all,
        single_cnn_accuracy=single_acc,
        best_zoo_accuracy=max(r.test_accuracy for r in records),
        rank_model_ids=tuple(rank.model_ids()),
        rank_param_total=rank_params,
        vote_all_param_total=all_params,
        single_param_count=single_params,
        fit_converged=fit.converged,
    )
    return RunResult(report=report, response_matrix=rm, fit=fit, items=items,
                     predictions=predictions, records=records,
                     test_item_ids=tuple(item_ids),
                     test_labels=np.asarray(y_test, dtype=np.int64))


def summarize(reports) -> list[dict]:
    """Per-fold means over bootstrap runs plus a final ``Average`` row."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to summarize")
    folds: dict[float, list[RunReport]] = {}
    for rep in reports:
        folds.setdefault(rep.fold_ratio, []).append(rep)

    def _mean(values):
        values = [v for v in values if v is not None]
        return sum(values) / len(values) if values else None

    rows = []
    for ratio, group in folds.items():
        rows.append({
            "fold": _fold_label(ratio),
            "irt_difficulty": _mean([r.routed_accuracy("difficulty")
                                     for r in group]),
            "irt_discrimination": _mean([r.routed_accuracy("discrimination")
                                         for r in group]),
            "voting_irt_rank": _mean([r.vote_rank_accuracy for r in group]),
            "single_cnn": _mean([r.single_cnn_accuracy for r in group]),
            "voting_all": _mean([r.vote_all_accuracy for r in group]),
        })
    average = {"fold": "Average"}
    for key in ("irt_difficulty", "irt_discrimination", "voting_irt_rank",
                "single_cnn", "voting_all"):
        average[key] = _mean([row[key] for row in rows])
    rows.append(average)
    return rows


def _fold_label(ratio: float) -> str:
    train_pct = round(ratio * 100)
    return f"{train_pct}/{100 - train_pct}%"


def complexity_summary(reports, dataset_label: str = "dataset") -> dict:
    """Parameter-count totals, maximum over all folds and runs: the rank's
    member sum, the single CNN, and the whole-zoo voting sum."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to summarize")
    singles = [r.single_param_count for r in reports
               if r.single_param_count is not None]
    return {
        "dataset": dataset_label,
        "irt_rank_params": max(r.rank_param_total for r in reports),
        "single_cnn_params": max(singles) if singles else None,
        "voting_all_params": max(r.vote_all_param_total for r in reports),
    }
