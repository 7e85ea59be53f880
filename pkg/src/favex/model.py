"""Feedforward ReLU classifier: loading, validation and evaluation.

Models are a strict alternation of affine and ReLU layers, starting and
ending with an affine layer.  The on-disk format is a single JSON
document::

    {
      "name": "...",
      "input_dim": d,
      "input_lower": [...],          # optional, defaults to 0^d
      "input_upper": [...],          # optional, defaults to 1^d
      "labels": ["..."],             # optional, k class names
      "layers": [
        {"type": "affine", "rows": n, "cols": m,
         "weights": [...],           # n*m floats, row-major
         "bias": [...]},             # n floats
        {"type": "relu"},
        ...
      ]
    }

All arithmetic is 64-bit floating point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParseError, ShapeError


@dataclass(frozen=True)
class AffineLayer:
    weights: np.ndarray  # (rows, cols)
    bias: np.ndarray  # (rows,)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class ReluLayer:
    width: int


Layer = AffineLayer | ReluLayer


@dataclass(frozen=True)
class Network:
    """Immutable after construction; safe to share across workers."""

    name: str
    input_dim: int
    layers: tuple[Layer, ...]
    input_lower: np.ndarray
    input_upper: np.ndarray
    labels: tuple[str, ...] | None = None
    # Derived, filled in by validate(): affine weight/bias arrays in order.
    _weights: tuple[np.ndarray, ...] = field(default=(), repr=False)
    _biases: tuple[np.ndarray, ...] = field(default=(), repr=False)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].rows

    @property
    def num_relu_layers(self) -> int:
        return sum(1 for l in self.layers if isinstance(l, ReluLayer))

    @property
    def relu_widths(self) -> tuple[int, ...]:
        return tuple(l.width for l in self.layers if isinstance(l, ReluLayer))

    @property
    def affine(self) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
        """Affine weights and biases in layer order."""
        return self._weights, self._biases


def make_network(
    name: str,
    input_dim: int,
    layers: list[Layer],
    input_lower=None,
    input_upper=None,
    labels=None,
) -> Network:
    """Assemble and validate a Network from already-built layers."""
    if input_dim <= 0:
        raise ShapeError(f"input_dim must be positive, got {input_dim}")
    lower = (
        np.zeros(input_dim) if input_lower is None else np.asarray(input_lower, dtype=np.float64)
    )
    upper = (
        np.ones(input_dim) if input_upper is None else np.asarray(input_upper, dtype=np.float64)
    )
    if lower.shape != (input_dim,) or upper.shape != (input_dim,):
        raise ShapeError("input bounds must have length input_dim")
    if np.any(lower > upper):
        raise DomainError("input_lower exceeds input_upper")

    if not layers:
        raise ShapeError("network needs at least one affine layer")
    expect_affine = True
    prev_width = input_dim
    for idx, layer in enumerate(layers):
        if expect_affine:
            if not isinstance(layer, AffineLayer):
                raise ShapeError("expected an affine layer", layer=idx)
            if layer.bias.shape != (layer.rows,):
                raise ShapeError(
                    f"bias length {layer.bias.shape[0]} != weight rows {layer.rows}",
                    layer=idx,
                )
            if layer.cols != prev_width:
                raise ShapeError(
                    f"weight cols {layer.cols} != incoming width {prev_width}",
                    layer=idx,
                )
            prev_width = layer.rows
        else:
            if not isinstance(layer, ReluLayer):
                raise ShapeError("expected a relu layer", layer=idx)
            if layer.width != prev_width:
                raise ShapeError(
                    f"relu width {layer.width} != incoming width {prev_width}",
                    layer=idx,
                )
        expect_affine = not expect_affine
    if not isinstance(layers[-1], AffineLayer):
        raise ShapeError("final layer must be affine", layer=len(layers) - 1)

    weights = tuple(
        np.ascontiguousarray(l.weights, dtype=np.float64)
        for l in layers
        if isinstance(l, AffineLayer)
    )
    biases = tuple(
        np.ascontiguousarray(l.bias, dtype=np.float64)
        for l in layers
        if isinstance(l, AffineLayer)
    )
    for w in weights + biases + (lower, upper):
        w.setflags(write=False)
    return Network(
        name=name,
        input_dim=input_dim,
        layers=tuple(layers),
        input_lower=lower,
        input_upper=upper,
        labels=tuple(labels) if labels else None,
        _weights=weights,
        _biases=biases,
    )


def _parse_layer(doc: dict, idx: int) -> Layer:
    kind = doc.get("type")
    if kind == "affine":
        try:
            rows, cols = int(doc["rows"]), int(doc["cols"])
            flat = np.asarray(doc["weights"], dtype=np.float64)
            bias = np.asarray(doc["bias"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"layer {idx}: bad affine fields ({exc})") from exc
        if flat.ndim != 1 or flat.size != rows * cols:
            raise ShapeError(
                f"weights has {flat.size} entries, expected rows*cols = {rows * cols}",
                layer=idx,
            )
        if bias.ndim != 1 or bias.size != rows:
            raise ShapeError(
                f"bias length {bias.size} != weight rows {rows}", layer=idx
            )
        return AffineLayer(weights=flat.reshape(rows, cols), bias=bias)
    if kind == "relu":
        # width is implied by the preceding affine; checked in make_network
        return ReluLayer(width=int(doc.get("width", -1)))
    raise ParseError(f"layer {idx}: unknown type {kind!r}")


def load_model(path) -> Network:
    """Load and validate a network from a JSON document on disk."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read model {path}: {exc}") from exc
    if not isinstance(doc, dict) or "layers" not in doc or "input_dim" not in doc:
        raise ParseError("model document must contain input_dim and layers")

    input_dim = int(doc["input_dim"])
    raw_layers = doc["layers"]
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ParseError("layers must be a non-empty list")

    layers: list[Layer] = []
    prev_width = input_dim
    for idx, layer_doc in enumerate(raw_layers):
        layer = _parse_layer(layer_doc, idx)
        if isinstance(layer, ReluLayer) and layer.width < 0:
            layer = ReluLayer(width=prev_width)
        if isinstance(layer, AffineLayer):
            prev_width = layer.rows
        layers.append(layer)

    return make_network(
        name=str(doc.get("name", "unnamed")),
        input_dim=input_dim,
        layers=layers,
        input_lower=doc.get("input_lower"),
        input_upper=doc.get("input_upper"),
        labels=doc.get("labels"),
    )


def save_model(net: Network, path) -> None:
    """Write a network in the on-disk JSON format (round-trips load_model)."""
    doc = {
        "name": net.name,
        "input_dim": net.input_dim,
        "input_lower": net.input_lower.tolist(),
        "input_upper": net.input_upper.tolist(),
        "layers": [],
    }
    if net.labels:
        doc["labels"] = list(net.labels)
    for layer in net.layers:
        if isinstance(layer, AffineLayer):
            doc["layers"].append(
                {
                    "type": "affine",
                    "rows": layer.rows,
                    "cols": layer.cols,
                    "weights": layer.weights.reshape(-1).tolist(),
                    "bias": layer.bias.tolist(),
                }
            )
        else:
            doc["layers"].append({"type": "relu"})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def forward(net: Network, x) -> np.ndarray:
    """Raw logits for a single input vector (exact float64 composition)."""
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (net.input_dim,):
        raise ShapeError(f"input length {v.shape} != ({net.input_dim},)")
    for layer in net.layers:
        if isinstance(layer, AffineLayer):
            v = layer.weights @ v + layer.bias
        else:
            v = np.maximum(v, 0.0)
    return v


def predict(net: Network, x) -> int:
    """Class index of the maximal logit; ties break to the lowest index."""
    return int(np.argmax(forward(net, x)))


def load_input_vector(path, input_dim: int) -> np.ndarray:
    """Read an input point from a JSON array or a single-row CSV file."""
    text = open(path, "r", encoding="utf-8").read().strip()
    try:
        data = json.loads(text)
        vec = np.asarray(data, dtype=np.float64).reshape(-1)
    except (json.JSONDecodeError, ValueError):
        try:
            row = text.splitlines()[0]
            vec = np.asarray([float(t) for t in row.replace(";", ",").split(",") if t.strip()])
        except (IndexError, ValueError) as exc:
            raise ParseError(f"cannot parse input vector from {path}") from exc
    if vec.shape != (input_dim,):
        raise ShapeError(f"input has {vec.size} entries, model expects {input_dim}")
    return vec
