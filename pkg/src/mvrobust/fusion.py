"""Multi-view fusion methods and scenario-aware inference.

Six methods, each tied to the missing-view technique it is evaluated with:

==============  =========
method          technique
==============  =========
input-concat    impute
feature-concat  impute
feature-cca     exemplar
feature-avg     ignore
feature-gated   ignore
ensemble-avg    ignore
==============  =========

Views are always processed in lexicographic name order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .encoders import HIDDEN, Head, MLPEncoder, ViewSpec, encode_view, make_encoder
from .errors import AvailabilityError, ConfigError, DimensionError
from .missing import (
    NO_MISS,
    CCAModel,
    ExemplarIndex,
    ImputeBank,
    MissingScenario,
    apply_impute,
    nearest_exemplar,
    project_shared,
)
from .nn import Module, glorot
from .tensor import Tensor, as_tensor, concat, no_grad, parameter, softmax, stack

METHODS = ("input-concat", "feature-concat", "feature-cca", "feature-avg", "feature-gated", "ensemble-avg")
TECHNIQUES = {
    "input-concat": "impute",
    "feature-concat": "impute",
    "feature-cca": "exemplar",
    "feature-avg": "ignore",
    "feature-gated": "ignore",
    "ensemble-avg": "ignore",
}


@dataclass(frozen=True)
class Task:
    kind: str  # "binary", "multiclass" or "regression"
    n_classes: int = 0

    def __post_init__(self):
        if self.kind not in ("binary", "multiclass", "regression"):
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.kind == "binary" and self.n_classes != 2:
            object.__setattr__(self, "n_classes", 2)
        if self.kind == "multiclass" and self.n_classes < 2:
            raise ConfigError("multiclass tasks need n_classes >= 2")

    @property
    def is_classification(self) -> bool:
        return self.kind != "regression"

    @property
    def out_dim(self) -> int:
        return self.n_classes if self.is_classification else 1


@dataclass
class MultiViewBatch:
    views: dict[str, np.ndarray]
    availability: dict[str, bool]

    def __post_init__(self):
        missing_entries = set(self.views) - set(self.availability)
        if missing_entries:
            raise ConfigError(f"availability has no entry for views {sorted(missing_entries)}")
        sizes = {arr.shape[0] for name, arr in self.views.items() if self.availability.get(name, False)}
        if len(sizes) > 1:
            raise DimensionError(f"views disagree on batch size: {sorted(sizes)}")

    @classmethod
    def full(cls, views: Mapping[str, np.ndarray]) -> "MultiViewBatch":
        return cls(dict(views), {v: True for v in views})

    @property
    def batch_size(self) -> int:
        for name, arr in self.views.items():
            if self.availability[name]:
                return arr.shape[0]
        raise AvailabilityError("batch has no available view")

    def available(self) -> list[str]:
        return sorted(v for v, ok in self.availability.items() if ok)


# fusion rules


def fuse_input_concat(batch: MultiViewBatch, order: Sequence[str] | None = None) -> Tensor:
    """Flatten every view (channels x time) and concatenate them per sample."""
    order = sorted(batch.views) if order is None else sorted(order)
    absent = [v for v in order if not batch.availability.get(v, False)]
    if absent:
        raise AvailabilityError(f"input concatenation needs every view; missing {absent}")
    b = batch.batch_size
    flat = [np.nan_to_num(batch.views[v].reshape(b, -1), nan=0.0) for v in order]
    return Tensor(np.concatenate(flat, axis=1))


def fuse_feature_concat(features: Mapping[str, Tensor], order: Sequence[str] | None = None) -> Tensor:
    order = sorted(features) if order is None else sorted(order)
    absent = [v for v in order if v not in features]
    if absent:
        raise AvailabilityError(f"feature concatenation needs every view; missing {absent}")
    if len(order) == 1:
        return as_tensor(features[order[0]])
    return concat([features[v] for v in order], axis=-1)


def _available_names(features: Mapping[str, Tensor], availability: Mapping[str, bool] | None) -> list[str]:
    if availability is None:
        names = sorted(features)
    else:
        names = sorted(v for v, ok in availability.items() if ok)
    if not names:
        raise AvailabilityError("no view is available")
    absent = [v for v in names if v not in features]
    if absent:
        raise AvailabilityError(f"available views without features: {absent}")
    return names


def fuse_feature_avg(features: Mapping[str, Tensor], availability: Mapping[str, bool] | None = None) -> Tensor:
    """Elementwise mean over the available views' features."""
    names = _available_names(features, availability)
    if len(names) == 1:
        return as_tensor(features[names[0]])
    return stack([features[v] for v in names], axis=-2).mean(axis=-2)


class GateParams(Module):
    """One linear scoring vector and bias per view; the score is ``w_v . h_v + b_v``."""

    def __init__(self, views: Sequence[str], rng: np.random.Generator, width: int = HIDDEN):
        self.views = tuple(sorted(views))
        self.weight = glorot(rng, (len(self.views), width), width, 1)
        self.bias = parameter(np.zeros(len(self.views)))


def gate_weights(features: Mapping[str, Tensor], availability: Mapping[str, bool] | None, gate: GateParams) -> tuple[Tensor, Tensor]:
    """Softmax gate weights over available views (exactly 0 for missing ones).

    Returns ``(weights, stacked)`` with weights of shape (..., V) and the
    stacked features (..., V, width); missing views are stacked as zeros.
    """
    names = _available_names(features, availability)
    present = [v in names for v in gate.views]
    unknown = set(names) - set(gate.views)
    if unknown:
        raise ConfigError(f"gate has no parameters for views {sorted(unknown)}")
    ref = as_tensor(features[names[0]])
    stacked = stack([features[v] if ok else Tensor(np.zeros(ref.shape)) for v, ok in zip(gate.views, present)], axis=-2)
    scores = (stacked * gate.weight).sum(axis=-1) + gate.bias
    weights = softmax(scores, axis=-1, mask=np.array(present))
    return weights, stacked


def fuse_feature_gated(features: Mapping[str, Tensor], availability: Mapping[str, bool] | None, gate: GateParams) -> Tensor:
    weights, stacked = gate_weights(features, availability, gate)
    w = weights.reshape(*weights.shape, 1)
    return (stacked * w).sum(axis=-2)


def ensemble_predict(predictions: Mapping[str, np.ndarray], availability: Mapping[str, bool] | None, task: Task) -> np.ndarray:
    """Average view-dedicated predictions over available views.

    Classification inputs are probability vectors (already softmaxed), so the
    result is again a probability vector; regression inputs are scalars.
    """
    if availability is None:
        names = sorted(predictions)
    else:
        names = sorted(v for v, ok in availability.items() if ok)
    if not names:
        raise AvailabilityError("ensemble has no available view")
    total = np.asarray(predictions[names[0]], dtype=np.float64)
    for v in names[1:]:
        total = total + predictions[v]
    return total / len(names)


# networks


class InputConcatNet(Module):
    def __init__(self, specs: Sequence[ViewSpec], task: Task, rng: np.random.Generator):
        self.order = tuple(sorted(s.name for s in specs))
        width = sum(s.width for s in specs)
        self.trunk = MLPEncoder(width, rng)
        self.head = Head(HIDDEN, task.out_dim, rng)

    def __call__(self, batch: MultiViewBatch) -> Tensor:
        return self.head(self.trunk(fuse_input_concat(batch, self.order)))


class FeatureNet(Module):
    """Per-view encoders merged by concatenation, averaging or scalar gates."""

    def __init__(self, specs: Sequence[ViewSpec], task: Task, rng: np.random.Generator, merge: str, temporal_encoder: str = "tempcnn"):
        if merge not in ("concat", "avg", "gated"):
            raise ConfigError(f"unknown merge rule {merge!r}")
        self.merge = merge
        self.order = tuple(sorted(s.name for s in specs))
        by_name = {s.name: s for s in specs}
        self.encoders = {v: make_encoder(by_name[v], rng, temporal_encoder) for v in self.order}
        self.gate = GateParams(self.order, rng) if merge == "gated" else None
        head_in = HIDDEN * len(self.order) if merge == "concat" else HIDDEN
        self.head = Head(head_in, task.out_dim, rng)

    def encode(self, batch: MultiViewBatch) -> dict[str, Tensor]:
        return {v: encode_view(self.encoders[v], batch.views[v]) for v in batch.available() if v in self.encoders}

    def fuse(self, features: Mapping[str, Tensor], availability: Mapping[str, bool]) -> Tensor:
        if self.merge == "concat":
            return fuse_feature_concat(features, self.order)
        if self.merge == "avg":
            return fuse_feature_avg(features, availability)
        return fuse_feature_gated(features, availability, self.gate)

    def __call__(self, batch: MultiViewBatch) -> Tensor:
        return self.head(self.fuse(self.encode(batch), batch.availability))


class SingleViewNet(Module):
    def __init__(self, spec: ViewSpec, task: Task, rng: np.random.Generator, temporal_encoder: str = "tempcnn"):
        self.view = spec.name
        self.encoder = make_encoder(spec, rng, temporal_encoder)
        self.head = Head(HIDDEN, task.out_dim, rng)

    def __call__(self, batch: MultiViewBatch) -> Tensor:
        return self.head(encode_view(self.encoder, batch.views[self.view]))


class EnsembleNet(Module):
    def __init__(self, members: Mapping[str, SingleViewNet]):
        self.members = {v: members[v] for v in sorted(members)}
        self.order = tuple(self.members)


def build_network(method: str, specs: Sequence[ViewSpec], task: Task, rng: np.random.Generator, temporal_encoder: str = "tempcnn") -> Module:
    if method == "input-concat":
        return InputConcatNet(specs, task, rng)
    if method in ("feature-concat", "feature-cca"):
        return FeatureNet(specs, task, rng, "concat", temporal_encoder)
    if method == "feature-avg":
        return FeatureNet(specs, task, rng, "avg", temporal_encoder)
    if method == "feature-gated":
        return FeatureNet(specs, task, rng, "gated", temporal_encoder)
    if method == "ensemble-avg":
        return EnsembleNet({s.name: SingleViewNet(s, task, rng, temporal_encoder) for s in specs})
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


# trained models and inference


@dataclass
class FusionModel:
    method: str
    technique: str
    task: Task
    network: Module
    views: tuple[str, ...]
    impute_bank: ImputeBank | None = None
    cca: CCAModel | None = None
    index: ExemplarIndex | None = None
    target_mean: float = 0.0
    target_std: float = 1.0

    def __post_init__(self):
        if self.method not in TECHNIQUES:
            raise ConfigError(f"unknown method {self.method!r}")
        if TECHNIQUES[self.method] != self.technique:
            raise ConfigError(
                f"method {self.method!r} is paired with technique {TECHNIQUES[self.method]!r}, not {self.technique!r}"
            )
        self.views = tuple(sorted(self.views))


def to_prediction(output: np.ndarray, model: FusionModel) -> np.ndarray:
    """Map raw network output to probabilities (classification) or target units (regression)."""
    if model.task.is_classification:
        return softmax(output, axis=-1).data
    return output.reshape(-1) * model.target_std + model.target_mean


def _exemplar_outputs(model: FusionModel, batch: MultiViewBatch) -> np.ndarray:
    net = model.network
    features = {v: t.data for v, t in net.encode(batch).items()}
    missing = [v for v in model.views if not batch.availability[v]]
    if missing:
        rows = nearest_exemplar(project_shared(features, model.cca), model.index)
        for v in missing:
            features[v] = model.index.features[v][rows]
    fused = fuse_feature_concat({v: Tensor(f) for v, f in features.items()}, model.views)
    return net.head(fused).data


def forward(model: FusionModel, views: Mapping[str, np.ndarray], scenario: MissingScenario | None = None) -> np.ndarray:
    """Predict with the model's paired technique, treating ``scenario.missing`` as absent.

    Returns class probabilities (B, C) or regression predictions (B,).
    """
    scenario = NO_MISS if scenario is None else scenario
    scenario.check(model.views)
    availability = scenario.availability(model.views)
    with no_grad():
        present = {v: views[v] for v in model.views if availability[v]}
        if model.technique == "impute":
            if scenario.missing and model.impute_bank is None:
                raise ConfigError(f"{model.method} has no impute bank")
            filled = apply_impute(present, scenario, model.impute_bank) if scenario.missing else present
            return to_prediction(model.network(MultiViewBatch.full(filled)).data, model)
        batch = MultiViewBatch(present, availability)
        if model.technique == "exemplar":
            if scenario.missing and (model.cca is None or model.index is None):
                raise ConfigError(f"{model.method} has no CCA exemplar index")
            return to_prediction(_exemplar_outputs(model, batch), model)
        net = model.network
        if isinstance(net, EnsembleNet):
            preds = {v: to_prediction(member(batch).data, model) for v, member in net.members.items() if availability[v]}
            return ensemble_predict(preds, availability, model.task)
        return to_prediction(net(batch).data, model)
