"""Inference-time handling of missing views.

* Impute: replace a missing view with its training-set mean.
* Exemplar: project the available views' features into a shared CCA space,
  find the nearest training sample there and borrow its feature for the
  missing view.
* Ignore: handled by the fusion rules themselves (availability masks).

All fitted artifacts here are built from training rows only and are never
mutated afterwards.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AvailabilityError, ConfigError

DEGREES = ("none", "moderate", "intermediate", "extreme")


@dataclass(frozen=True)
class MissingScenario:
    name: str
    missing: frozenset[str] = frozenset()
    degree: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "missing", frozenset(self.missing))
        if self.degree not in DEGREES:
            raise ConfigError(f"unknown missingness degree {self.degree!r}")

    def availability(self, views: Iterable[str]) -> dict[str, bool]:
        return {v: v not in self.missing for v in views}

    def check(self, views: Sequence[str]) -> None:
        unknown = self.missing - set(views)
        if unknown:
            raise ConfigError(f"scenario {self.name!r} references unknown views {sorted(unknown)}")
        if self.missing >= set(views):
            raise AvailabilityError(f"scenario {self.name!r} leaves no view available")


NO_MISS = MissingScenario("no-miss")


def _label(views: Iterable[str]) -> str:
    return "+".join(sorted(views))


def scenario_grid(views: Sequence[str]) -> list[MissingScenario]:
    """The evaluation grid for a dataset with the given view names.

    With both ``radar`` and ``optical`` present: no-miss, miss-radar,
    miss-optical, miss-everything-but-radar-and-optical, only-radar and
    only-optical.  Without radar (e.g. an optical + weather dataset): no-miss
    plus every single view missing.  Scenarios that would coincide with an
    earlier one (or leave nothing to miss) are dropped.
    """
    views = sorted(views)
    if "optical" not in views:
        raise ConfigError("the scenario grid needs an 'optical' view")
    grid = [NO_MISS]
    if "radar" in views and len(views) > 1:
        others = [v for v in views if v not in ("radar", "optical")]
        candidates = [
            MissingScenario("miss-radar", {"radar"}, "moderate"),
            MissingScenario("miss-optical", {"optical"}, "moderate"),
        ]
        if others:
            candidates += [
                MissingScenario(f"miss-{_label(others)}", others, "intermediate"),
                MissingScenario("only-radar", set(views) - {"radar"}, "extreme"),
                MissingScenario("only-optical", set(views) - {"optical"}, "extreme"),
            ]
    else:
        candidates = [MissingScenario(f"miss-{v}", {v}, "moderate") for v in views if len(views) > 1]
    seen = {NO_MISS.missing}
    for scenario in candidates:
        if scenario.missing not in seen:
            grid.append(scenario)
            seen.add(scenario.missing)
    return grid


def all_availability_patterns(views: Sequence[str]) -> list[dict[str, bool]]:
    """Every non-empty subset of ``views`` as an availability map (2^V - 1 patterns)."""
    views = list(views)
    patterns = []
    for mask in itertools.product([True, False], repeat=len(views)):
        if any(mask):
            patterns.append(dict(zip(views, mask)))
    return patterns


# imputation


@dataclass(frozen=True)
class ImputeBank:
    means: Mapping[str, np.ndarray]


def compute_impute_bank(train_views: Mapping[str, np.ndarray]) -> ImputeBank:
    """Per-view elementwise mean over training samples (axis 0).

    NaN padding is skipped; a position that is padding in every sample stays NaN.
    """
    means = {}
    for name, arr in train_views.items():
        if arr.shape[0] == 0:
            raise ValueError(f"cannot compute impute means for view {name!r}: no training samples")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mean = np.nanmean(arr, axis=0)
        mean.setflags(write=False)
        means[name] = mean
    return ImputeBank(means)


def apply_impute(views: Mapping[str, np.ndarray], scenario: MissingScenario, bank: ImputeBank) -> dict[str, np.ndarray]:
    """Return the view dict with every missing view replaced by its bank mean.

    Available views are passed through as the very same arrays.
    """
    out = dict(views)
    if not scenario.missing:
        return out
    batch = next(iter(views.values())).shape[0]
    for name in sorted(scenario.missing):
        if name not in bank.means:
            raise KeyError(f"impute bank has no mean for view {name!r}")
        mean = bank.means[name]
        out[name] = np.broadcast_to(mean, (batch,) + mean.shape).copy()
    return out


# CCA exemplar retrieval


@dataclass(frozen=True)
class CCAModel:
    views: tuple[str, ...]
    projections: Mapping[str, np.ndarray]  # view -> (p_v, d_shared)
    means: Mapping[str, np.ndarray]
    eigenvalues: np.ndarray
    gamma: float

    @property
    def d_shared(self) -> int:
        return self.eigenvalues.shape[0]


def _inv_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    return (vecs / np.sqrt(vals)) @ vecs.T


def fit_cca(features: Mapping[str, np.ndarray], d_shared: int = 32, gamma: float = 1e-3) -> CCAModel:
    """Multi-view CCA as a regularised generalised eigenproblem.

    Solves ``A w = lambda B w`` where ``A`` holds all (cross-)covariance blocks
    and ``B = blockdiag(C_vv + gamma I)``, via the symmetric whitened form.  An
    eigenvalue above 1 means the component is positively correlated across
    views; only such components are kept, at most ``d_shared`` of them.  Each
    component's sign makes its largest-magnitude stacked coefficient
    positive, and each view's projected training scores are scaled to unit
    variance so that views can be averaged in the shared space.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive; unregularised covariances may be singular")
    names = tuple(sorted(features))
    mats = [np.asarray(features[v], dtype=np.float64) for v in names]
    n = mats[0].shape[0]
    if any(m.shape[0] != n for m in mats):
        raise ValueError("all views need the same number of samples")
    if n <= d_shared:
        raise ValueError(f"need more samples ({n}) than shared dimensions ({d_shared})")
    means = {v: m.mean(axis=0) for v, m in zip(names, mats)}
    centered = [m - means[v] for v, m in zip(names, mats)]
    sizes = [m.shape[1] for m in centered]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    whiten = [_inv_sqrt(c.T @ c / n + gamma * np.eye(c.shape[1])) for c in centered]
    white = np.concatenate([c @ w for c, w in zip(centered, whiten)], axis=1)
    vals, vecs = np.linalg.eigh(white.T @ white / n)
    order = np.argsort(vals)[::-1]
    keep = max(1, min(d_shared, int(np.sum(vals > 1.0 + 1e-9))))
    vals, vecs = vals[order[:keep]], vecs[:, order[:keep]]

    pivot = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[pivot, np.arange(keep)])

    projections = {}
    for i, v in enumerate(names):
        proj = whiten[i] @ vecs[offsets[i] : offsets[i + 1]]
        scale = (centered[i] @ proj).std(axis=0)
        scale = np.where(scale > 1e-8 * max(scale.max(), 1e-300), scale, 1.0)
        proj = proj / scale
        proj.setflags(write=False)
        projections[v] = proj
    return CCAModel(names, projections, means, vals, gamma)


def project_view(x: np.ndarray, view: str, model: CCAModel) -> np.ndarray:
    return (np.asarray(x) - model.means[view]) @ model.projections[view]


def project_shared(features: Mapping[str, np.ndarray], model: CCAModel) -> np.ndarray:
    """Average of the available views' centred projections into the shared space."""
    if not features:
        raise AvailabilityError("project_shared needs at least one available view")
    names = sorted(features)
    total = project_view(features[names[0]], names[0], model)
    for v in names[1:]:
        total = total + project_view(features[v], v, model)
    return total / len(names)


def canonical_correlations(model: CCAModel, features: Mapping[str, np.ndarray]) -> np.ndarray:
    """Per-component Pearson correlation averaged over all view pairs."""
    if len(model.views) < 2:
        raise ValueError("canonical correlations need at least two views")
    scores = {v: project_view(features[v], v, model) for v in model.views}
    pairs = list(itertools.combinations(model.views, 2))
    total = np.zeros(model.d_shared)
    for a, b in pairs:
        sa = scores[a] - scores[a].mean(axis=0)
        sb = scores[b] - scores[b].mean(axis=0)
        denom = np.sqrt((sa * sa).sum(axis=0) * (sb * sb).sum(axis=0))
        total += np.where(denom > 0, (sa * sb).sum(axis=0) / np.where(denom > 0, denom, 1.0), 0.0)
    return total / len(pairs)


@dataclass(frozen=True)
class ExemplarIndex:
    shared: np.ndarray  # (N, d_shared)
    features: Mapping[str, np.ndarray] = field(default_factory=dict)  # view -> (N, p_v)

    def __len__(self) -> int:
        return self.shared.shape[0]


def build_exemplar_index(features: Mapping[str, np.ndarray], model: CCAModel) -> ExemplarIndex:
    """Index training samples by their all-view shared representation."""
    shared = project_shared(features, model)
    stored = {}
    for v, arr in features.items():
        arr = np.array(arr, dtype=np.float64)
        arr.setflags(write=False)
        stored[v] = arr
    shared.setflags(write=False)
    return ExemplarIndex(shared, stored)


def nearest_exemplar(query: np.ndarray, index: ExemplarIndex, chunk: int = 256) -> np.ndarray:
    """Row index of the Euclidean nearest neighbour of each query; ties go to the lowest index."""
    if len(index) == 0:
        raise ValueError("exemplar index is empty")
    q = np.atleast_2d(query)
    out = np.empty(q.shape[0], dtype=np.intp)
    for start in range(0, q.shape[0], chunk):
        block = q[start : start + chunk]
        dist = ((block[:, None, :] - index.shared[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = np.argmin(dist, axis=1)
    return out


def retrieve_exemplar(query: np.ndarray, index: ExemplarIndex, view: str) -> np.ndarray:
    """Stored ``view`` feature of the nearest training sample (one row per query)."""
    rows = nearest_exemplar(query, index)
    found = index.features[view][rows]
    return found[0] if np.ndim(query) == 1 else found
