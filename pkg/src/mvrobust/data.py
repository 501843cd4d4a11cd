"""Multi-view datasets: synthetic presets, CSV ingestion, z-scoring and fold splits.

Temporal views are arrays of shape (N, channels, timesteps); static views are
(N, features).  Padding of variable-length sequences is stored as NaN.
"""

from __future__ import annotations

import csv
import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .encoders import ViewSpec
from .errors import ConfigError, DataError, DimensionError
from .fusion import Task


@dataclass
class MultiViewDataset:
    specs: list[ViewSpec]
    views: dict[str, np.ndarray]
    targets: np.ndarray
    task: Task
    preset: str = "custom"
    temporal_encoder: str = "tempcnn"

    def __post_init__(self):
        self.specs = sorted(self.specs, key=lambda s: s.name)
        n = len(self.targets)
        for spec in self.specs:
            arr = self.views.get(spec.name)
            if arr is None:
                raise DataError(f"no data for view {spec.name!r}")
            if arr.shape != (n,) + spec.shape:
                raise DimensionError(f"view {spec.name!r} has shape {arr.shape}, expected {(n,) + spec.shape}")
        extra = set(self.views) - {s.name for s in self.specs}
        if extra:
            raise DataError(f"views without a spec: {sorted(extra)}")
        if self.task.is_classification:
            if len(self.targets) and (self.targets.min() < 0 or self.targets.max() >= self.task.n_classes):
                raise DataError(f"class labels must lie in [0, {self.task.n_classes})")

    @property
    def n(self) -> int:
        return len(self.targets)

    @property
    def view_names(self) -> list[str]:
        return [s.name for s in self.specs]

    def subset(self, rows: np.ndarray) -> "MultiViewDataset":
        rows = np.asarray(rows)
        return MultiViewDataset(
            list(self.specs),
            {v: arr[rows] for v, arr in self.views.items()},
            self.targets[rows],
            self.task,
            self.preset,
            self.temporal_encoder,
        )


# synthetic presets


@dataclass(frozen=True)
class SyntheticView:
    name: str
    kind: str
    channels: int
    timesteps: int
    signal: float
    categories: int = 0  # > 0 appends a one-hot categorical block to a static view
    private: int = 0  # latent dimensions only this view observes


_CROP_VIEWS = [
    SyntheticView("optical", "temporal", 10, 12, 1.0, private=4),
    SyntheticView("radar", "temporal", 2, 12, 1.4, private=2),
    SyntheticView("weather", "temporal", 5, 12, 0.9, private=3),
    SyntheticView("static", "static", 8, 1, 2.4, private=3),
]

PRESETS: dict[str, dict] = {
    "crop-binary-like": {"task": Task("binary", 2), "encoder": "tempcnn", "separation": 0.4, "views": _CROP_VIEWS},
    "crop-multi-like": {"task": Task("multiclass", 10), "encoder": "tempcnn", "separation": 1.0, "views": _CROP_VIEWS},
    "lfmc-like": {
        "task": Task("regression"),
        "encoder": "gru",
        "views": [
            SyntheticView("optical", "temporal", 8, 4, 1.5, private=3),
            SyntheticView("radar", "temporal", 3, 4, 1.8, private=2),
            SyntheticView("static", "static", 8, 1, 2.0, categories=4, private=2),
        ],
    },
    "yield-like": {
        "task": Task("regression"),
        "encoder": "tempcnn",
        "variable_length": True,
        "views": [
            SyntheticView("optical", "temporal", 10, 24, 1.0, private=2),
            SyntheticView("weather", "temporal", 5, 24, 0.45, private=2),
        ],
    },
}


@dataclass(frozen=True)
class SyntheticConfig:
    preset: str = "crop-binary-like"
    n: int = 2000
    seed: int = 0
    latent_dim: int = 15
    noise: float = 1.0
    label_noise: float = 1.0
    separation: float | None = None  # per-coordinate class-centre offset; None uses the preset's
    overrides: Mapping[str, tuple[int, int]] = field(default_factory=dict)  # view -> (channels, timesteps)
    signal: Mapping[str, float] = field(default_factory=dict)  # view -> signal weight
    folds: int = 10

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.n < 10 * self.folds:
            raise ConfigError(f"n={self.n} is too small for {self.folds}-fold cross-validation (need >= {10 * self.folds})")
        if self.latent_dim < 1 or self.noise < 0 or self.label_noise < 0 or (self.separation is not None and self.separation <= 0):
            raise ConfigError("latent_dim must be positive and noise levels non-negative")
        private = sum(v.private for v in PRESETS[self.preset]["views"])
        if self.latent_dim <= private:
            raise ConfigError(f"latent_dim must exceed the {private} view-private dimensions of {self.preset!r}")


def _temporal_basis(rng: np.random.Generator, latent_dim: int, steps: int) -> np.ndarray:
    """Smooth per-latent modulation curves, shape (latent_dim, steps)."""
    phase = rng.uniform(0, 2 * np.pi, size=(latent_dim, 1))
    t = np.arange(steps)[None, :] / max(steps, 1)
    return 1.0 + 0.5 * np.sin(2 * np.pi * t + phase)


def generate_synthetic(config: SyntheticConfig) -> MultiViewDataset:
    """Latent-factor multi-view data.

    Each sample has a latent vector z.  Classification labels are the nearest
    of C latent centres (random sign vectors times ``separation``; the two
    binary centres are antipodal) to a noisy copy of z.  Regression targets
    are a random-sign linear functional of z plus noise.  Every latent
    coordinate thus matters equally to the target.  ``label_noise`` therefore caps
    the attainable quality even when z is recovered exactly.  Each view is a view-specific random
    linear map of z (modulated over time by smooth curves for temporal views)
    scaled by the view's signal weight, plus unit Gaussian noise.
    """
    preset = PRESETS[config.preset]
    task: Task = preset["task"]
    rng = np.random.default_rng(config.seed)
    n, dim = config.n, config.latent_dim

    if task.is_classification:
        separation = preset.get("separation", 1.0) if config.separation is None else config.separation
        centers = separation * rng.choice([-1.0, 1.0], size=(task.n_classes, dim))
        if task.n_classes == 2:
            centers[1] = -centers[0]
        labels = rng.permutation(np.arange(n) % task.n_classes)
        z = centers[labels] + rng.normal(scale=0.5, size=(n, dim))
        noisy = z + config.label_noise * rng.normal(size=(n, dim))
        dist = ((noisy[:, None, :] - centers[None]) ** 2).sum(axis=2)
        targets = np.argmin(dist, axis=1).astype(np.int64)
    else:
        z = rng.normal(size=(n, dim))
        beta = rng.choice([-1.0, 1.0], size=dim) / np.sqrt(dim)
        targets = z @ beta + 0.3 * config.label_noise * rng.normal(size=n)

    specs, views = [], {}
    start = dim - sum(v.private for v in preset["views"])
    shared = np.arange(dim) < start
    for view in preset["views"]:
        channels, steps = config.overrides.get(view.name, (view.channels, view.timesteps))
        weight = config.signal.get(view.name, view.signal)
        seen = shared.copy()
        seen[start : start + view.private] = True
        start += view.private
        loading = rng.normal(size=(channels, dim)) * seen / np.sqrt(seen.sum())
        if view.kind == "temporal":
            basis = _temporal_basis(rng, dim, steps)
            signal = np.einsum("cl,nl,lt->nct", loading, z, basis)
            arr = weight * signal + config.noise * rng.normal(size=(n, channels, steps))
        else:
            arr = weight * z @ loading.T + config.noise * rng.normal(size=(n, channels))
            if view.categories:
                mix = rng.normal(size=(dim, view.categories))
                logits = weight * z @ mix + config.noise * rng.normal(size=(n, view.categories))
                arr = np.concatenate([arr, one_hot(np.argmax(logits, axis=1), view.categories)], axis=1)
                channels += view.categories
        views[view.name] = arr
        specs.append(ViewSpec(view.name, view.kind, channels, steps if view.kind == "temporal" else 1))

    if preset.get("variable_length"):
        steps = max(s.timesteps for s in specs if s.kind == "temporal")
        lengths = rng.integers((2 * steps) // 3, steps + 1, size=n)
        pad = np.arange(steps)[None, :] >= lengths[:, None]
        for s in specs:
            if s.kind == "temporal":
                arr = views[s.name]
                arr[np.broadcast_to(pad[:, None, : s.timesteps], arr.shape)] = np.nan

    return MultiViewDataset(specs, views, targets, task, config.preset, preset["encoder"])


# normalisation and encoding


@dataclass(frozen=True)
class Normalizer:
    means: Mapping[str, np.ndarray]
    stds: Mapping[str, np.ndarray]


def zscore_fit(train_views: Mapping[str, np.ndarray]) -> Normalizer:
    """Per-feature (and per-timestep) mean and population std over training rows.

    Zero-variance features get std 1 so they normalise to 0.
    """
    means, stds = {}, {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for name, arr in train_views.items():
            mean = np.nan_to_num(np.nanmean(arr, axis=0), nan=0.0)
            std = np.nan_to_num(np.nanstd(arr, axis=0), nan=0.0)
            std = np.where(std > 1e-12, std, 1.0)
            mean.setflags(write=False)
            std.setflags(write=False)
            means[name], stds[name] = mean, std
    return Normalizer(means, stds)


def zscore_apply(normalizer: Normalizer, views: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: (arr - normalizer.means[name]) / normalizer.stds[name] for name, arr in views.items()}


def one_hot(values: Sequence[int], cardinality: int) -> np.ndarray:
    values = np.asarray(values)
    if values.size and (values.min() < 0 or values.max() >= cardinality):
        raise IndexError(f"category index out of range [0, {cardinality})")
    out = np.zeros((values.size, cardinality))
    out[np.arange(values.size), values.astype(np.intp)] = 1.0
    return out


# cross-validation


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[np.ndarray, ...]

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_val(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted training rows and validation rows for ``fold``."""
        val = np.sort(self.folds[fold])
        train = np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != fold]))
        return train, val


def kfold_split(n: int, k: int, seed: int) -> FoldSplit:
    """Seeded shuffle, then a contiguous partition into k near-equal folds."""
    if k < 1 or k > n:
        raise ConfigError(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return FoldSplit(tuple(np.array_split(perm, k)))


# CSV ingestion

_TEMPORAL_COLUMN = re.compile(r"^(?P<band>.+)_t(?P<idx>\d+)$")


def _read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    if not rows:
        raise DataError(f"{path}: empty file (a header row is required)")
    return rows[0], rows[1:]


def _parse_cells(path: Path, header: list[str], rows: list[list[str]], allow_empty: bool) -> np.ndarray:
    out = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise DataError(f"{path}:{line}: expected {len(header)} cells, found {len(row)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" and allow_empty:
                out[i, j] = np.nan
                continue
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}:{line}: non-numeric value {cell!r} in column {header[j]!r}") from None
    return out


def _temporal_layout(path: Path, header: list[str], channels: int, steps: int) -> list[int]:
    """Column positions in channel-major (band, time) order."""
    bands: dict[str, dict[int, int]] = {}
    for pos, name in enumerate(header):
        m = _TEMPORAL_COLUMN.match(name)
        if not m:
            raise DataError(f"{path}:1: column {name!r} is not of the form <band>_t<idx>")
        bands.setdefault(m["band"], {})[int(m["idx"])] = pos
    for band, steps_found in bands.items():
        for t in range(steps):
            if t not in steps_found:
                raise DataError(f"{path}:1: missing column '{band}_t{t}'")
    if len(bands) != channels or len(header) != channels * steps:
        raise DimensionError(
            f"{path}: manifest declares {channels} channels x {steps} timesteps "
            f"= {channels * steps} columns, file has {len(header)} ({len(bands)} bands)"
        )
    return [bands[b][t] for b in bands for t in range(steps)]


def load_csv(manifest_path: str | Path, merge_static: bool = True) -> MultiViewDataset:
    """Load a dataset described by a JSON manifest.

    Categorical static views hold one integer column and are one-hot expanded
    to ``channels`` columns.  With ``merge_static`` all static views are
    concatenated (manifest order) into a single view named ``static``.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{manifest_path}: cannot read manifest ({exc})") from exc
    root = manifest_path.parent
    try:
        task = Task(**manifest["task"])
        view_entries = manifest["views"]
        target_file = manifest.get("target", "target.csv")
    except (KeyError, TypeError) as exc:
        raise DataError(f"{manifest_path}: malformed manifest ({exc})") from exc

    header, rows = _read_table(root / target_file)
    if "target" not in header:
        raise DataError(f"{root / target_file}:1: missing column 'target'")
    col = header.index("target")
    values = _parse_cells(root / target_file, ["target"], [[r[col]] if len(r) > col else [] for r in rows], False)[:, 0]
    targets = values.astype(np.int64) if task.is_classification else values
    if task.is_classification and not np.array_equal(targets, values):
        raise DataError(f"{root / target_file}: class targets must be integers")
    n = len(targets)

    specs, views = [], {}
    for entry in view_entries:
        try:
            spec = ViewSpec(entry["name"], entry["kind"], int(entry["channels"]), int(entry.get("timesteps", 1)), bool(entry.get("categorical", False)))
            path = root / entry["file"]
        except KeyError as exc:
            raise DataError(f"{manifest_path}: view entry missing field {exc}") from exc
        header, rows = _read_table(path)
        if len(rows) != n:
            raise DataError(f"{path}: {len(rows)} rows but the target file has {n}")
        if spec.kind == "temporal":
            order = _temporal_layout(path, header, spec.channels, spec.timesteps)
            cells = _parse_cells(path, header, rows, allow_empty=True)
            arr = cells[:, order].reshape(n, spec.channels, spec.timesteps)
        elif spec.categorical:
            if len(header) != 1:
                raise DimensionError(f"{path}: a categorical view has exactly one column, found {len(header)}")
            codes = _parse_cells(path, header, rows, allow_empty=False)[:, 0]
            if not np.array_equal(codes, np.round(codes)):
                raise DataError(f"{path}: categorical values must be integers")
            try:
                arr = one_hot(codes.astype(np.int64), spec.channels)
            except IndexError as exc:
                raise DataError(f"{path}: {exc}") from None
        else:
            if len(header) != spec.channels:
                raise DimensionError(f"{path}: manifest declares {spec.channels} columns, file has {len(header)}")
            arr = _parse_cells(path, header, rows, allow_empty=False)
        specs.append(spec)
        views[spec.name] = arr

    statics = [s for s in specs if s.kind == "static"]
    if merge_static and len(statics) > 1:
        merged = np.concatenate([views.pop(s.name) for s in statics], axis=1)
        specs = [s for s in specs if s.kind != "static"] + [ViewSpec("static", "static", merged.shape[1])]
        views["static"] = merged
    return MultiViewDataset(specs, views, targets, task, manifest.get("preset", "custom"), manifest.get("temporal_encoder", "tempcnn"))


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def save_csv(dataset: MultiViewDataset, out_dir: str | Path) -> Path:
    """Write a manifest plus one CSV per view and a target CSV; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for spec in dataset.specs:
        arr = dataset.views[spec.name]
        if spec.kind == "temporal":
            header = [f"b{c}_t{t}" for c in range(spec.channels) for t in range(spec.timesteps)]
        else:
            header = [f"f{c}" for c in range(spec.channels)]
        with open(out_dir / f"{spec.name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in arr.reshape(dataset.n, -1):
                writer.writerow([_fmt(x) for x in row])
        entries.append(
            {"name": spec.name, "kind": spec.kind, "channels": spec.channels, "timesteps": spec.timesteps, "categorical": False, "file": f"{spec.name}.csv"}
        )
    with open(out_dir / "target.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target"])
        for y in dataset.targets:
            writer.writerow([str(int(y)) if dataset.task.is_classification else repr(float(y))])
    manifest = {
        "preset": dataset.preset,
        "task": {"kind": dataset.task.kind, "n_classes": dataset.task.n_classes},
        "temporal_encoder": dataset.temporal_encoder,
        "views": entries,
        "target": "target.csv",
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
