"""Fully connected ReLU network stored as one flat parameter vector.

Layout of ``flat``: layer by layer, first the weight matrix in row-major
order (rows are output neurons), then that layer's biases. Hidden layers use
ReLU; the last layer is affine and its scalar output is mapped to a positive
evolution time by :func:`output_map`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import InvalidArgument

T_FLOOR = 1e-3
OUTPUT_MAP = "softplus_floor"


def param_count(layer_sizes: Sequence[int]) -> int:
    sizes = list(layer_sizes)
    if len(sizes) < 2 or any(int(s) != s or s < 1 for s in sizes):
        raise InvalidArgument(f"invalid layer sizes {sizes}")
    return int(sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:])))


@dataclass(frozen=True)
class MlpParams:
    layer_sizes: tuple[int, ...]
    flat: np.ndarray

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        flat = np.asarray(self.flat, dtype=float).ravel()
        object.__setattr__(self, "flat", flat)
        if sizes[-1] != 1:
            raise InvalidArgument("output layer must have exactly one neuron")
        if flat.size != param_count(sizes):
            raise InvalidArgument(
                f"flat has {flat.size} entries, layer sizes {sizes} need {param_count(sizes)}"
            )

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int]) -> "MlpParams":
        return cls(tuple(layer_sizes), np.zeros(param_count(layer_sizes)))

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Unflatten into ``[(W, b), ...]`` with ``W`` of shape (fan_out, fan_in)."""
        out = []
        pos = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = self.flat[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
            pos += fan_in * fan_out
            b = self.flat[pos:pos + fan_out]
            pos += fan_out
            out.append((w, b))
        return out

    @classmethod
    def from_layers(cls, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> "MlpParams":
        sizes = [np.shape(layers[0][0])[1]] + [np.shape(w)[0] for w, _ in layers]
        flat = np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)]) for w, b in layers])
        return cls(tuple(sizes), flat)


def forward(params: MlpParams, x) -> float:
    """Raw (pre-output-map) scalar output of the network."""
    h = np.asarray(x, dtype=float).ravel()
    if h.size != params.input_dim:
        raise InvalidArgument(f"input has length {h.size}, network expects {params.input_dim}")
    layers = params.layers()
    for w, b in layers[:-1]:
        h = np.maximum(w @ h + b, 0.0)
    w, b = layers[-1]
    return float((w @ h + b)[0])


def softplus(x):
    return np.logaddexp(0.0, x)


def output_map(raw: float, t_floor: float = T_FLOOR) -> float:
    """Strictly increasing map onto ``(t_floor, inf)``: softplus plus a floor."""
    return float(softplus(raw)) + t_floor


# model files


def save_model(path, params: MlpParams, observation_schema: dict, header: str = "") -> None:
    """Write a YAML model document, optionally preceded by ``#`` comment lines."""
    doc = {
        "layer_sizes": list(params.layer_sizes),
        "flat": [float(v) for v in params.flat],
        "output_map": OUTPUT_MAP,
        "t_floor": T_FLOOR,
        "observation_schema": dict(observation_schema),
    }
    text = yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100)
    Path(path).write_text(header + text)


def load_model(path) -> tuple[MlpParams, dict]:
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict):
        raise InvalidArgument(f"{path}: not a model document")
    missing = {"layer_sizes", "flat", "output_map", "t_floor", "observation_schema"} - set(doc)
    if missing:
        raise InvalidArgument(f"{path}: missing keys {sorted(missing)}")
    if doc["output_map"] != OUTPUT_MAP:
        raise InvalidArgument(f"{path}: unsupported output map {doc['output_map']!r}")
    if float(doc["t_floor"]) != T_FLOOR:
        raise InvalidArgument(f"{path}: unsupported t_floor {doc['t_floor']}")
    params = MlpParams(tuple(doc["layer_sizes"]), np.array(doc["flat"], dtype=float))
    return params, dict(doc["observation_schema"])
