"""Train small fully-connected ReLU digit classifiers and export them as
engine-format JSON fixtures with golden inputs/logits.

The 8x8 scikit-learn digits set (64 features in [0, 1] after scaling)
keeps every downstream oracle tractable.  Training is plain SGD with an
L1 weight penalty; the exported bundle contains the model document, 100
golden inputs with float64 logits and predicted classes, and metadata
(accuracy, seeds, suggested epsilon presets).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split
from torch import nn

ACCURACY_FLOOR = 0.85
EPSILON_PRESETS = [0.05, 0.1, 0.2]
N_GOLDEN = 100


class TrainingDiverged(RuntimeError):
    """Accuracy floor unmet after retries with fresh seeds."""


@dataclass
class FixtureBundle:
    model_doc: dict
    inputs: np.ndarray  # (N_GOLDEN, 64) in [0, 1]
    golden: list[dict]  # per input: {"logits": [...], "predicted": int}
    metadata: dict

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "model.json").write_text(json.dumps(self.model_doc, indent=1) + "\n")
        (out / "inputs.json").write_text(json.dumps(self.inputs.tolist()) + "\n")
        (out / "golden.json").write_text(json.dumps(self.golden, indent=1) + "\n")
        (out / "metadata.json").write_text(json.dumps(self.metadata, indent=2) + "\n")


def _dataset(seed: int):
    digits = load_digits()
    x = (digits.data / 16.0).astype(np.float64)
    y = digits.target.astype(np.int64)
    return train_test_split(x, y, test_size=0.25, random_state=seed, stratify=y)


class _Mlp(nn.Module):
    def __init__(self, hidden_width: int, hidden_layers: int):
        super().__init__()
        dims = [64] + [hidden_width] * hidden_layers + [10]
        blocks = []
        for i, (m, n) in enumerate(zip(dims, dims[1:])):
            blocks.append(nn.Linear(m, n))
            if i < len(dims) - 2:
                blocks.append(nn.ReLU())
        self.net = nn.Sequential(*blocks)

    def forward(self, x):
        return self.net(x)


def _fit(hidden_width, hidden_layers, seed, l1, epochs, lr):
    torch.manual_seed(seed)
    x_tr, x_te, y_tr, y_te = _dataset(seed)
    model = _Mlp(hidden_width, hidden_layers).double()
    opt = torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9)
    loss_fn = nn.CrossEntropyLoss()
    xt = torch.from_numpy(x_tr)
    yt = torch.from_numpy(y_tr)
    n = len(xt)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(epochs):
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, 64):
            idx = perm[start : start + 64]
            opt.zero_grad()
            out = model(xt[idx])
            penalty = sum(p.abs().sum() for p in model.parameters() if p.dim() > 1)
            loss = loss_fn(out, yt[idx]) + l1 * penalty
            loss.backward()
            opt.step()
    with torch.no_grad():
        train_acc = (model(xt).argmax(1) == yt).double().mean().item()
        pred_te = model(torch.from_numpy(x_te)).argmax(1).numpy()
    test_acc = float((pred_te == y_te).mean())
    return model, x_te, train_acc, test_acc


def _export_doc(model: _Mlp, name: str) -> dict:
    layers = []
    for mod in model.net:
        if isinstance(mod, nn.Linear):
            w = mod.weight.detach().numpy().astype(np.float64)
            b = mod.bias.detach().numpy().astype(np.float64)
            layers.append(
                {
                    "type": "affine",
                    "rows": w.shape[0],
                    "cols": w.shape[1],
                    "weights": w.reshape(-1).tolist(),
                    "bias": b.tolist(),
                }
            )
        else:
            layers.append({"type": "relu"})
    return {
        "name": name,
        "input_dim": 64,
        "input_lower": [0.0] * 64,
        "input_upper": [1.0] * 64,
        "labels": [str(i) for i in range(10)],
        "layers": layers,
    }


def train_export(
    hidden_width: int,
    hidden_layers: int,
    seed: int = 0,
    l1: float = 1e-4,
    epochs: int = 120,
    lr: float = 0.1,
    retries: int = 3,
) -> FixtureBundle:
    """Train, validate against the accuracy floor, and assemble a bundle."""
    if hidden_width < 1 or hidden_layers < 1:
        raise ValueError("hidden_width and hidden_layers must be >= 1")
    attempts = []
    for attempt in range(retries):
        cur_seed = seed + attempt
        model, x_te, train_acc, test_acc = _fit(
            hidden_width, hidden_layers, cur_seed, l1, epochs, lr
        )
        attempts.append((cur_seed, test_acc))
        if test_acc >= ACCURACY_FLOOR:
            break
    else:
        raise TrainingDiverged(
            f"test accuracy below {ACCURACY_FLOOR} after {retries} seeds: {attempts}"
        )

    name = f"fc-{hidden_width}x{hidden_layers}"
    doc = _export_doc(model, name)
    inputs = x_te[:N_GOLDEN].astype(np.float64)
    with torch.no_grad():
        logits = model(torch.from_numpy(inputs)).numpy().astype(np.float64)
    golden = [
        {"logits": row.tolist(), "predicted": int(np.argmax(row))} for row in logits
    ]
    metadata = {
        "name": name,
        "hidden_width": hidden_width,
        "hidden_layers": hidden_layers,
        "seed": attempts[-1][0],
        "l1": l1,
        "epochs": epochs,
        "lr": lr,
        "train_accuracy": train_acc,
        "test_accuracy": test_acc,
        "epsilon_presets": EPSILON_PRESETS,
    }
    return FixtureBundle(model_doc=doc, inputs=inputs, golden=golden, metadata=metadata)
