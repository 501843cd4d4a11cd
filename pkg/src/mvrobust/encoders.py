"""Per-view encoders (static MLP, temporal CNN, stacked GRU) and the prediction head.

Every encoder maps a view to a 128-dimensional feature vector.  Inputs may be a
single sample or a batch; temporal views are laid out channels x time.
Padded timesteps of variable-length sequences are marked with NaN in the raw
array and turned into per-sample lengths by :func:`split_padding`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import Dense, GRUParams, Module, glorot, gru_cell
from .tensor import Tensor, as_tensor, conv1d_channels_last, parameter, relu

HIDDEN = 128


@dataclass(frozen=True)
class ViewSpec:
    name: str
    kind: str  # "temporal" or "static"
    channels: int
    timesteps: int = 1
    categorical: bool = False

    def __post_init__(self):
        if self.kind not in ("temporal", "static"):
            raise ConfigError(f"view {self.name!r}: kind must be 'temporal' or 'static', got {self.kind!r}")
        if self.channels < 1 or self.timesteps < 1:
            raise ConfigError(f"view {self.name!r}: channels and timesteps must be positive")
        if (self.kind == "static") != (self.timesteps == 1):
            raise ConfigError(f"view {self.name!r}: timesteps must be 1 exactly when the view is static")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.channels, self.timesteps) if self.kind == "temporal" else (self.channels,)

    @property
    def width(self) -> int:
        return self.channels * self.timesteps


def split_padding(x: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Replace NaN padding of a (B, C, T) batch with zeros and return per-sample lengths.

    A timestep counts as padding when every channel is NaN.  Returns ``None`` for
    the lengths when no sample is padded.
    """
    nan = np.isnan(x)
    if not nan.any():
        return x, None
    valid_steps = ~nan.all(axis=1)
    lengths = valid_steps.sum(axis=1)
    return np.where(nan, 0.0, x), lengths


def _time_mask(lengths: np.ndarray, steps: int) -> np.ndarray:
    return (np.arange(steps)[None, :] < lengths[:, None]).astype(np.float64)


class MLPEncoder(Module):
    arch = "mlp"

    def __init__(self, d_in: int, rng: np.random.Generator, width: int = HIDDEN):
        self.layer1 = Dense(d_in, width, rng)
        self.layer2 = Dense(width, width, rng)

    def __call__(self, x, lengths=None) -> Tensor:
        return relu(self.layer2(relu(self.layer1(x))))


class TempCNNEncoder(Module):
    """Two same-padded convolutions (kernel 3) with ReLU, then mean pooling over valid steps."""

    arch = "tempcnn"

    def __init__(self, channels: int, rng: np.random.Generator, width: int = HIDDEN, kernel: int = 3):
        if kernel % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {kernel}")
        self.kernel1 = glorot(rng, (width, channels, kernel), channels * kernel, width * kernel)
        self.bias1 = parameter(np.zeros(width))
        self.kernel2 = glorot(rng, (width, width, kernel), width * kernel, width * kernel)
        self.bias2 = parameter(np.zeros(width))

    def __call__(self, x, lengths: np.ndarray | None = None) -> Tensor:
        x = as_tensor(x)
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[1] != self.kernel1.shape[1]:
            raise DimensionError(f"temporal CNN expects (B, {self.kernel1.shape[1]}, T), got {x.shape}")
        # time-major internally: (B, T, C)
        x = Tensor(np.ascontiguousarray(x.data.transpose(0, 2, 1))) if not x.requires_grad else x.transpose(0, 2, 1)
        h = relu(conv1d_channels_last(x, self.kernel1, self.bias1))
        if lengths is None:
            h = relu(conv1d_channels_last(h, self.kernel2, self.bias2))
            pooled = h.mean(axis=1)
        else:
            # zero hidden states past each sequence end so the second layer sees a truncated sequence
            mask = _time_mask(lengths, x.shape[1])[:, :, None]
            h = relu(conv1d_channels_last(h * mask, self.kernel2, self.bias2))
            pooled = (h * mask).sum(axis=1) * (1.0 / lengths[:, None])
        return pooled.reshape(-1) if single else pooled


class GRUEncoder(Module):
    """Two stacked GRU layers from a zero state; the top layer's final state is the feature."""

    arch = "gru"

    def __init__(self, channels: int, rng: np.random.Generator, width: int = HIDDEN):
        self.layers = [GRUParams(channels, width, rng), GRUParams(width, width, rng)]

    def __call__(self, x, lengths: np.ndarray | None = None) -> Tensor:
        x = as_tensor(x)
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[1] != self.layers[0].d_in:
            raise DimensionError(f"GRU encoder expects (B, {self.layers[0].d_in}, T), got {x.shape}")
        batch, _, steps = x.shape
        states = [Tensor(np.zeros((batch, layer.d_hidden))) for layer in self.layers]
        mask = None if lengths is None else _time_mask(lengths, steps)
        for t in range(steps):
            inp = x[:, :, t]
            for i, layer in enumerate(self.layers):
                new = gru_cell(inp, states[i], layer)
                if mask is not None:
                    keep = mask[:, t : t + 1]
                    new = new * keep + states[i] * (1.0 - keep)
                states[i] = new
                inp = new
        out = states[-1]
        return out.reshape(-1) if single else out


class Head(Module):
    """Dense(128, relu) followed by a linear output of ``out_dim`` logits or one scalar."""

    def __init__(self, d_in: int, out_dim: int, rng: np.random.Generator, width: int = HIDDEN):
        self.hidden = Dense(d_in, width, rng)
        self.output = Dense(width, out_dim, rng)

    def __call__(self, z) -> Tensor:
        return self.output(relu(self.hidden(z)))


def make_encoder(spec: ViewSpec, rng: np.random.Generator, temporal_encoder: str = "tempcnn") -> Module:
    if spec.kind == "static":
        return MLPEncoder(spec.channels, rng)
    if temporal_encoder == "tempcnn":
        return TempCNNEncoder(spec.channels, rng)
    if temporal_encoder == "gru":
        return GRUEncoder(spec.channels, rng)
    raise ConfigError(f"unknown temporal encoder {temporal_encoder!r}")


def encode_view(encoder: Module, x: np.ndarray) -> Tensor:
    """Encode a raw (possibly NaN-padded) view batch."""
    if isinstance(encoder, MLPEncoder):
        return encoder(np.nan_to_num(x, nan=0.0))
    filled, lengths = split_padding(x)
    return encoder(filled, lengths)


def encode_static_mlp(x, params: MLPEncoder) -> Tensor:
    return params(x)


def encode_temporal_cnn(x, params: TempCNNEncoder, lengths: np.ndarray | None = None) -> Tensor:
    return params(x, lengths)


def encode_temporal_gru(x, params: GRUEncoder, lengths: np.ndarray | None = None) -> Tensor:
    return params(x, lengths)


def predict_head(z, params: Head) -> Tensor:
    """Raw logits (classification) or a 1-vector (regression); softmax is left to losses and metrics."""
    z = as_tensor(z)
    if z.shape[-1] != params.hidden.d_in:
        raise DimensionError(f"head expects width {params.hidden.d_in}, got {z.shape[-1]}")
    return params(z)
