"""Per-neuron importance scoring for GLU layers and removal-set selection.

Three criteria are provided. The peak-to-peak magnitude criterion ("maw")
scores each neuron as (max + |min|) of its gate row plus the same quantity
for its up row — the signed maximum plus the absolute minimum, applied
literally. The variance criterion ("vow") sums the population variances of
the two rows; the norm-product criterion ("pon") multiplies their L2 norms.
The variance and norm-product criteria are known to collapse model quality
even at mild pruning levels; they are implemented for comparison and for
their ordering properties, not as recommended defaults.

Scores are float64 so that the magnitude criterion is exactly reproducible:
row max/min are exact, and the three fixed-order additions round identically
everywhere.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._validation import thread_count
from .model import GluLayer, ToyTransformer

__all__ = [
    "CRITERIA",
    "ImportanceVector",
    "normalize_criterion",
    "maw_scores",
    "vow_scores",
    "pon_scores",
    "score_layer",
    "score_model",
    "select_prune_set",
    "write_scores_csv",
]

CRITERIA = ("maw", "vow", "pon")


def normalize_criterion(criterion: str) -> str:
    name = str(criterion).lower()
    if name not in CRITERIA:
        raise ValueError(f"unknown criterion '{criterion}', expected one of {CRITERIA}")
    return name


@dataclass
class ImportanceVector:
    scores: np.ndarray  # [d_ff], float64
    criterion: str
    layer_index: int = 0

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.criterion = normalize_criterion(self.criterion)
        if self.scores.ndim != 1 or self.scores.size < 1:
            raise ValueError("scores must be a non-empty 1-D vector")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    def __len__(self) -> int:
        return self.scores.size


def maw_scores(layer: GluLayer, layer_index: int = 0) -> ImportanceVector:
    """Peak-to-peak magnitude score per neuron: (max + |min|) of the gate row
    plus (max + |min|) of the up row."""
    gate = layer.w_gate.astype(np.float64)
    up = layer.w_up.astype(np.float64)
    gate_max_abs = gate.max(axis=1) + np.abs(gate.min(axis=1))
    up_max_abs = up.max(axis=1) + np.abs(up.min(axis=1))
    return ImportanceVector(gate_max_abs + up_max_abs, "maw", layer_index)


def vow_scores(layer: GluLayer, layer_index: int = 0) -> ImportanceVector:
    """Population variance of the gate row plus population variance of the up row."""
    gate = layer.w_gate.astype(np.float64)
    up = layer.w_up.astype(np.float64)
    return ImportanceVector(gate.var(axis=1) + up.var(axis=1), "vow", layer_index)


def pon_scores(layer: GluLayer, layer_index: int = 0) -> ImportanceVector:
    """L2 norm of the gate row times L2 norm of the up row."""
    gate = layer.w_gate.astype(np.float64)
    up = layer.w_up.astype(np.float64)
    return ImportanceVector(
        np.sqrt((gate * gate).sum(axis=1)) * np.sqrt((up * up).sum(axis=1)),
        "pon",
        layer_index,
    )


_SCORERS: dict[str, Callable[[GluLayer, int], ImportanceVector]] = {
    "maw": maw_scores,
    "vow": vow_scores,
    "pon": pon_scores,
}


def score_layer(layer: GluLayer, criterion: str, layer_index: int = 0) -> ImportanceVector:
    return _SCORERS[normalize_criterion(criterion)](layer, layer_index)


def score_model(model: ToyTransformer, criterion: str) -> list[ImportanceVector]:
    """Score every block's GLU layer independently; results in layer order."""
    criterion = normalize_criterion(criterion)
    workers = min(thread_count(), len(model.blocks))
    if workers <= 1:
        return [score_layer(b.mlp, criterion, i) for i, b in enumerate(model.blocks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(score_layer, block.mlp, criterion, i)
            for i, block in enumerate(model.blocks)
        ]
        return [f.result() for f in futures]


def select_prune_set(scores, k: int) -> np.ndarray:
    """Indices of the k lowest-scoring neurons, ties broken by ascending index,
    returned in ascending order."""
    values = scores.scores if isinstance(scores, ImportanceVector) else np.asarray(scores)
    d_ff = values.size
    if not 0 <= k <= d_ff:
        raise ValueError(f"k must lie in [0, {d_ff}], got {k}")
    order = np.argsort(values, kind="stable")
    return np.sort(order[:k]).astype(np.int64)


def write_scores_csv(vectors: list[ImportanceVector], path) -> None:
    """Export score vectors with columns layer, neuron, criterion, score."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "neuron", "criterion", "score"])
        for vec in vectors:
            for neuron, value in enumerate(vec.scores):
                writer.writerow([vec.layer_index, neuron, vec.criterion, repr(float(value))])
