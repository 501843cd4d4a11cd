"""Cross-validated missing-view experiments.

Per fold: z-score the views with training statistics, train every requested
method with all views available, fit the missing-view artifacts (impute
means, CCA exemplar index) on the training rows, then evaluate each method on
the validation fold under every scenario of the grid.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .data import MultiViewDataset, Normalizer, SyntheticConfig, generate_synthetic, kfold_split, load_csv, zscore_apply, zscore_fit
from .errors import ConfigError, DataError
from .fusion import METHODS, TECHNIQUES, EnsembleNet, FeatureNet, FusionModel, MultiViewBatch, build_network, forward
from .metrics import prediction_error, prs, quality
from .missing import MissingScenario, build_exemplar_index, compute_impute_bank, fit_cca, scenario_grid
from .tensor import no_grad
from .train import TrainConfig, fit_network

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["method", "technique", "scenario", "degree", "fold", "task", "quality", "error", "prs", "epochs"]
SUMMARY_COLUMNS = ["method", "technique", "scenario", "quality_mean", "quality_std", "prs_mean", "prs_std", "folds"]
PRS_COLUMNS = ["method", "scenario", "degree", "prs_mean"]


@dataclass
class ExperimentConfig:
    preset: str | None = "crop-binary-like"
    manifest: str | None = None
    n: int = 2000
    data_seed: int | None = None
    latent_dim: int = 15
    noise: float = 1.0
    label_noise: float = 1.0
    separation: float | None = None
    signal: dict[str, float] = field(default_factory=dict)
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    folds: int = 10
    run_folds: list[int] | None = None
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10
    lr: float = 1e-3
    es_fraction: float = 0.1
    d_shared: int = 32
    cca_gamma: float = 1e-3
    scenarios: list[dict] | None = None
    out: str = "results"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        problems = []
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            problems.append(f"methods: unknown {unknown}; choose from {list(METHODS)}")
        if not self.methods:
            problems.append("methods: at least one method is required")
        if (self.preset is None) == (self.manifest is None):
            problems.append("preset/manifest: give exactly one data source")
        for name in ("n", "folds", "batch_size", "max_epochs", "patience", "d_shared", "jobs"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                problems.append(f"{name}: must be a positive integer, got {value!r}")
        for name in ("lr", "cca_gamma"):
            if not isinstance(getattr(self, name), (int, float)) or getattr(self, name) <= 0:
                problems.append(f"{name}: must be a positive number")
        if not 0 < self.es_fraction < 1:
            problems.append("es_fraction: must lie strictly between 0 and 1")
        if isinstance(self.folds, int) and self.run_folds is not None:
            bad = [f for f in self.run_folds if not 0 <= f < self.folds]
            if bad:
                problems.append(f"run_folds: indices {bad} outside 0..{self.folds - 1}")
        if problems:
            raise ConfigError("invalid config: " + "; ".join(problems))
        # canonical method order keeps report rows stable
        self.methods = [m for m in METHODS if m in self.methods]

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"invalid config: unknown keys {unknown}")
        if "manifest" in raw and "preset" not in raw:
            raw = {**raw, "preset": None}
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        return cls.from_dict(raw)

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(self.batch_size, self.max_epochs, self.patience, self.lr, self.es_fraction)


@dataclass
class ResultRow:
    method: str
    technique: str
    scenario: str
    degree: str
    fold: int
    task: str
    quality: float
    error: float
    prs: float | None
    epochs: int
    wall_time: float = field(default=0.0, compare=False)  # seconds; never part of row identity


@dataclass
class FoldModels:
    fold: int
    normalizer: Normalizer
    models: dict[str, FusionModel]
    epochs: dict[str, int]
    wall_time: dict[str, float]


def load_dataset(config: ExperimentConfig) -> MultiViewDataset:
    if config.manifest is not None:
        return load_csv(config.manifest)
    seed = config.seed if config.data_seed is None else config.data_seed
    return generate_synthetic(
        SyntheticConfig(
            config.preset,
            config.n,
            seed,
            config.latent_dim,
            config.noise,
            config.label_noise,
            config.separation,
            signal=config.signal,
            folds=config.folds,
        )
    )


def build_grid(config: ExperimentConfig, dataset: MultiViewDataset) -> list[MissingScenario]:
    if config.scenarios is None:
        return scenario_grid(dataset.view_names)
    grid = []
    for raw in config.scenarios:
        try:
            scenario = MissingScenario(raw["name"], frozenset(raw.get("missing", ())), raw.get("degree", "none" if not raw.get("missing") else "moderate"))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid scenario entry {raw!r}") from exc
        scenario.check(dataset.view_names)
        grid.append(scenario)
    if not grid or grid[0].missing:
        raise ConfigError("the first scenario of an override grid must be the no-miss baseline")
    return grid


def _rng(config: ExperimentConfig, fold: int, method: str) -> np.random.Generator:
    return np.random.default_rng([config.seed, fold, METHODS.index(method)])


def _features(net: FeatureNet, views: dict[str, np.ndarray], chunk: int = 512) -> dict[str, np.ndarray]:
    n = next(iter(views.values())).shape[0]
    parts: dict[str, list[np.ndarray]] = {v: [] for v in net.order}
    with no_grad():
        for start in range(0, n, chunk):
            batch = MultiViewBatch.full({v: arr[start : start + chunk] for v, arr in views.items()})
            for v, t in net.encode(batch).items():
                parts[v].append(t.data)
    return {v: np.concatenate(p) for v, p in parts.items()}


def train_fold(config: ExperimentConfig, dataset: MultiViewDataset, fold: int) -> FoldModels:
    """Train every configured method on the training rows of ``fold``."""
    split = kfold_split(dataset.n, config.folds, config.seed)
    train_rows, _ = split.train_val(fold)
    train_raw = {v: arr[train_rows] for v, arr in dataset.views.items()}
    normalizer = zscore_fit(train_raw)
    train_views = zscore_apply(normalizer, train_raw)
    targets = dataset.targets[train_rows]
    task = dataset.task
    if task.is_classification:
        t_mean, t_std, fit_targets = 0.0, 1.0, targets
    else:
        t_mean, t_std = float(targets.mean()), float(targets.std()) or 1.0
        fit_targets = (targets - t_mean) / t_std
    bank = compute_impute_bank(train_views)

    models, epochs, timings = {}, {}, {}
    for method in config.methods:
        start = time.perf_counter()
        rng = _rng(config, fold, method)
        net = build_network(method, dataset.specs, task, rng, dataset.temporal_encoder)
        label = f"{method} (fold {fold})"
        if isinstance(net, EnsembleNet):
            # view-dedicated models are trained independently, then frozen together
            results = [fit_network(member, train_views, fit_targets, task, config.train, rng, f"{label} [{v}]") for v, member in net.members.items()]
            epochs[method] = max(r.epochs for r in results)
        else:
            epochs[method] = fit_network(net, train_views, fit_targets, task, config.train, rng, label).epochs
        model = FusionModel(method, TECHNIQUES[method], task, net, tuple(dataset.view_names), target_mean=t_mean, target_std=t_std)
        if model.technique == "impute":
            model.impute_bank = bank
        elif model.technique == "exemplar":
            feats = _features(net, train_views)
            model.cca = fit_cca(feats, config.d_shared, config.cca_gamma)
            model.index = build_exemplar_index(feats, model.cca)
        models[method] = model
        timings[method] = time.perf_counter() - start
        log.info("fold %d: trained %s in %d epochs (%.1fs)", fold, method, epochs[method], timings[method])
    return FoldModels(fold, normalizer, models, epochs, timings)


def evaluate_scenarios(
    trained: FoldModels,
    dataset: MultiViewDataset,
    config: ExperimentConfig,
    grid: Sequence[MissingScenario],
) -> list[ResultRow]:
    """Score every (method, scenario) on the validation rows of the trained fold."""
    split = kfold_split(dataset.n, config.folds, config.seed)
    _, val_rows = split.train_val(trained.fold)
    views = zscore_apply(trained.normalizer, {v: arr[val_rows] for v, arr in dataset.views.items()})
    targets = dataset.targets[val_rows]
    rows = []
    for method, model in trained.models.items():
        error_full = None
        for scenario in grid:
            try:
                preds = forward(model, views, scenario)
            except (ConfigError, ValueError) as exc:
                raise type(exc)(f"{method} / {scenario.name}: {exc}") from exc
            q = quality(model.task, preds, targets)
            e = prediction_error(model.task, preds, targets)
            if not scenario.missing:
                error_full = e
                score = None
            else:
                score = prs(error_full, e)
            rows.append(
                ResultRow(method, model.technique, scenario.name, scenario.degree, trained.fold, model.task.kind, q, e, score, trained.epochs[method], trained.wall_time[method])
            )
    return rows


def run_fold(config: ExperimentConfig, dataset: MultiViewDataset, grid: Sequence[MissingScenario], fold: int) -> list[ResultRow]:
    return evaluate_scenarios(train_fold(config, dataset, fold), dataset, config, grid)


def _run_fold_job(args) -> list[ResultRow]:
    return run_fold(*args)


def run_rows(config: ExperimentConfig, dataset: MultiViewDataset | None = None) -> list[ResultRow]:
    """Per-fold result rows for the whole experiment (serial or in worker processes)."""
    dataset = load_dataset(config) if dataset is None else dataset
    if config.folds > dataset.n:
        raise ConfigError(f"folds={config.folds} exceeds the {dataset.n} samples")
    grid = build_grid(config, dataset)
    folds = list(range(config.folds)) if config.run_folds is None else sorted(set(config.run_folds))
    jobs = [(config, dataset, grid, f) for f in folds]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            chunks = list(pool.map(_run_fold_job, jobs))
    else:
        chunks = [_run_fold_job(job) for job in jobs]
    return [row for chunk in chunks for row in chunk]


# aggregation and reports


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def aggregate(rows: Sequence[ResultRow]) -> list[dict[str, Any]]:
    """Mean and population std across folds per (method, scenario), in first-seen order."""
    groups: dict[tuple[str, str], list[ResultRow]] = {}
    for row in rows:
        groups.setdefault((row.method, row.scenario), []).append(row)
    summary = []
    for (method, scenario), members in groups.items():
        qualities = np.array([r.quality for r in members])
        scores = [r.prs for r in members if r.prs is not None]
        summary.append(
            {
                "method": method,
                "technique": members[0].technique,
                "scenario": scenario,
                "degree": members[0].degree,
                "quality_mean": float(qualities.mean()),
                "quality_std": float(qualities.std()),
                "prs_mean": float(np.mean(scores)) if scores else None,
                "prs_std": float(np.std(scores)) if scores else None,
                "folds": len(members),
            }
        )
    return summary


def degree_prs(rows: Sequence[ResultRow]) -> dict[tuple[str, str], float]:
    """Mean PRS per (method, degree), pooling folds and scenarios of that degree."""
    pooled: dict[tuple[str, str], list[float]] = {}
    for row in rows:
        if row.prs is not None:
            pooled.setdefault((row.method, row.degree), []).append(row.prs)
    return {key: float(np.mean(vals)) for key, vals in pooled.items()}


def _write_csv(path: Path, columns: Sequence[str], records: Sequence[dict[str, Any]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow([_fmt(rec[c]) for c in columns])


def write_reports(rows: Sequence[ResultRow], out_dir: str | Path, meta: dict[str, Any] | None = None) -> dict[str, Path]:
    """Write results.csv, summary.csv, prs_series.csv and summary.json into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    summary = aggregate(rows)
    paths = {
        "results": out / "results.csv",
        "summary": out / "summary.csv",
        "prs_series": out / "prs_series.csv",
        "json": out / "summary.json",
    }
    _write_csv(paths["results"], RESULT_COLUMNS, [dataclasses.asdict(r) for r in rows])
    _write_csv(paths["summary"], SUMMARY_COLUMNS, summary)
    _write_csv(paths["prs_series"], PRS_COLUMNS, [s for s in summary if s["prs_mean"] is not None])
    payload = dict(meta or {})
    payload["aggregation"] = "per-fold PRS, then mean and population std (ddof=0) across folds"
    payload["summary"] = summary
    payload["wall_time"] = {}
    for r in rows:
        payload["wall_time"].setdefault(r.method, {})[str(r.fold)] = r.wall_time
    paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return paths


def read_results(in_dir: str | Path) -> list[ResultRow]:
    path = Path(in_dir) / "results.csv"
    try:
        with open(path, newline="") as fh:
            records = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    rows = []
    for i, rec in enumerate(records, start=2):
        try:
            rows.append(
                ResultRow(
                    rec["method"], rec["technique"], rec["scenario"], rec["degree"], int(rec["fold"]), rec["task"],
                    float(rec["quality"]), float(rec["error"]), float(rec["prs"]) if rec["prs"] else None, int(rec["epochs"]),
                )
            )
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}:{i}: malformed row ({exc})") from None
    return rows


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> dict[str, Path]:
    """Run all folds and write the report files; returns their paths."""
    out = Path(config.out if out_dir is None else out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    rows = run_rows(config)
    return write_reports(rows, out, {"config": dataclasses.asdict(config)})
