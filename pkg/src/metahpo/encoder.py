"""Permutation-invariant dataset encoders.

A dataset batch (X, y) flows through three stages: a per-cell network `f`
applied to each (feature value, target value) scalar pair, a
cross-aggregation network `g` on the per-feature row means, and a final
network `h` on the feature mean, yielding a fixed-size embedding that is
invariant to row and feature order and to row/column counts. An optional
head maps the embedding to a predicted landmarker vector through a
logistic output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Batch
from .util import atomic_write_text

_CHECKPOINT_VERSION = 1

_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


@dataclass(frozen=True)
class EncoderConfig:
    """Widths of the encoder stages.

    `f_widths`, `g_widths`, `h_widths` list the output size of each dense
    layer in the three stages; the embedding dimension m is the last entry
    of `h_widths`. Hidden layers use the named activation; the final `h`
    layer is linear and the final head layer is logistic. `head_widths`,
    when present, must end in the portfolio size p.
    """

    f_widths: tuple[int, ...] = (32, 32)
    g_widths: tuple[int, ...] = (32,)
    h_widths: tuple[int, ...] = (32, 16)
    activation: str = "relu"
    head_widths: tuple[int, ...] | None = None

    def __post_init__(self):
        for widths in (self.f_widths, self.g_widths, self.h_widths):
            if not widths or any(w < 1 for w in widths):
                raise ValueError("all stage widths must be >= 1")
        if self.head_widths is not None and (
            not self.head_widths or any(w < 1 for w in self.head_widths)
        ):
            raise ValueError("head widths must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def m(self) -> int:
        return self.h_widths[-1]

    @property
    def p(self) -> int | None:
        return self.head_widths[-1] if self.head_widths else None

    def layer_shapes(self) -> list[tuple[str, tuple[int, int]]]:
        """(name, (fan_in, fan_out)) per dense layer, in forward order."""
        shapes = []
        fan_in = 2  # each cell contributes the scalar pair (x, y)
        for stage, widths in (("f", self.f_widths), ("g", self.g_widths), ("h", self.h_widths)):
            for i, width in enumerate(widths):
                shapes.append((f"{stage}{i}", (fan_in, width)))
                fan_in = width
        if self.head_widths:
            fan_in = self.m
            for i, width in enumerate(self.head_widths):
                shapes.append((f"head{i}", (fan_in, width)))
                fan_in = width
        return shapes

    def to_dict(self) -> dict:
        return {
            "f_widths": list(self.f_widths),
            "g_widths": list(self.g_widths),
            "h_widths": list(self.h_widths),
            "activation": self.activation,
            "head_widths": list(self.head_widths) if self.head_widths else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            f_widths=tuple(d["f_widths"]),
            g_widths=tuple(d["g_widths"]),
            h_widths=tuple(d["h_widths"]),
            activation=d["activation"],
            head_widths=tuple(d["head_widths"]) if d.get("head_widths") else None,
        )


@dataclass
class EncoderParams:
    """All dense weights and biases, stored as one flat vector plus an index."""

    config: EncoderConfig
    values: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...], int], ...]  # (name, shape, offset)

    def view(self, name: str) -> np.ndarray:
        for n, shape, offset in self.layout:
            if n == name:
                size = int(np.prod(shape))
                return self.values[offset : offset + size].reshape(shape)
        raise KeyError(name)

    def views(self) -> dict[str, np.ndarray]:
        out = {}
        for name, shape, offset in self.layout:
            size = int(np.prod(shape))
            out[name] = self.values[offset : offset + size].reshape(shape)
        return out

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, self.values.copy(), self.layout)

    @property
    def size(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray
    dataset_name: str

    def __post_init__(self):
        if not np.isfinite(self.vector).all():
            raise ValueError(f"non-finite embedding for {self.dataset_name}")


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Symmetric scaled-uniform weights with bound sqrt(6/(fan_in+fan_out));
    zero biases. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    layout = []
    chunks = []
    offset = 0
    for name, (fan_in, fan_out) in config.layer_shapes():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        for suffix, arr in ((".W", W), (".b", b)):
            layout.append((name + suffix, arr.shape, offset))
            chunks.append(arr.ravel())
            offset += arr.size
    return EncoderParams(config, np.concatenate(chunks), tuple(layout))


def _dense_stack(x, names, params, activation, final_linear=False, final_sigmoid=False):
    """Apply the named dense layers to x; params maps names to arrays or
    Tensors, so the same code runs plain or traced."""
    act = _ACTIVATIONS[activation]
    for i, name in enumerate(names):
        x = ad.add(ad.matmul(x, params[name + ".W"]), params[name + ".b"])
        last = i == len(names) - 1
        if last and final_sigmoid:
            x = ad.sigmoid(x)
        elif last and final_linear:
            pass
        else:
            x = act(x)
    return x


def forward_embedding(params_map: dict, config: EncoderConfig, batch: Batch):
    """Embedding of one batch; returns an ndarray or Tensor of shape (1, m).

    Stage 1 runs f on every (x_cell, y_cell) scalar pair; stage 2 mean-pools
    over rows per feature and applies g; stage 3 mean-pools over features
    and applies h.
    """
    n, c = batch.X.shape
    if n == 0 or c == 0:
        raise ValueError("cannot encode an empty batch")
    cells = np.column_stack(
        [batch.X.reshape(n * c), np.repeat(batch.y.astype(float), c)]
    )  # row-major cell order

    f_names = [f"f{i}" for i in range(len(config.f_widths))]
    g_names = [f"g{i}" for i in range(len(config.g_widths))]
    h_names = [f"h{i}" for i in range(len(config.h_widths))]

    out = _dense_stack(cells, f_names, params_map, config.activation)
    per_feature = ad.reshape(
        ad.mean(ad.reshape(out, (n, c * config.f_widths[-1])), axis=0, keepdims=True),
        (c, config.f_widths[-1]),
    )
    out = _dense_stack(per_feature, g_names, params_map, config.activation)
    pooled = ad.mean(out, axis=0, keepdims=True)
    return _dense_stack(pooled, h_names, params_map, config.activation, final_linear=True)


def forward_prediction(params_map: dict, config: EncoderConfig, batch: Batch):
    """Predicted landmarker vector (1, p) through the reconstruction head."""
    if not config.head_widths:
        raise ValueError("encoder config has no reconstruction head")
    emb = forward_embedding(params_map, config, batch)
    head_names = [f"head{i}" for i in range(len(config.head_widths))]
    return _dense_stack(emb, head_names, params_map, config.activation, final_sigmoid=True)


def encode(params: EncoderParams, batch: Batch) -> Embedding:
    vec = forward_embedding(params.views(), params.config, batch)
    return Embedding(np.asarray(vec).reshape(-1), batch.dataset_name)


def reconstruct(params: EncoderParams, batch: Batch) -> np.ndarray:
    """Predicted landmarker vector of length p, entries in (0, 1)."""
    return np.asarray(forward_prediction(params.views(), params.config, batch)).reshape(-1)


def loss_and_gradient(params: EncoderParams, objective) -> tuple[float, np.ndarray]:
    """Evaluate `objective(params_map) -> scalar` and its gradient.

    The objective must be composed of autodiff ops over the supplied
    parameter tensors (typically through `forward_embedding` /
    `forward_prediction`). The gradient comes back in the flat
    EncoderParams layout.
    """
    tensors = {name: ad.Tensor(view) for name, view in params.views().items()}
    loss = objective(tensors)
    loss_value = float(loss.value)
    if not np.isfinite(loss_value):
        raise FloatingPointError(f"non-finite loss {loss_value}")
    ad.backward(loss)
    grad = np.zeros_like(params.values)
    for name, shape, offset in params.layout:
        g = tensors[name].grad
        size = int(np.prod(shape))
        if g is not None:
            grad[offset : offset + size] = np.asarray(g).ravel()
    return loss_value, grad


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: EncoderParams, path: str | Path) -> None:
    payload = {
        "version": _CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "values": params.values.tolist(),
    }
    atomic_write_text(path, json.dumps(payload))


def load_checkpoint(path: str | Path) -> EncoderParams:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    config = EncoderConfig.from_dict(payload["config"])
    fresh = init_params(config, seed=0)
    values = np.asarray(payload["values"], dtype=float)
    if values.shape != fresh.values.shape:
        raise ValueError("checkpoint values do not match config layout")
    if not np.isfinite(values).all():
        raise ValueError("checkpoint contains non-finite values")
    return EncoderParams(config, values, fresh.layout)
