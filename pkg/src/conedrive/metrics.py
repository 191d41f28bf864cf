"""Batched accuracy / mean-L1 evaluation, confusion matrices, and exports.

Evaluation walks a split in full batches only (the trailing partial batch is
dropped and counted). The primary accuracy figure is the mean of per-batch
accuracies; the global trace/sum accuracy is also reported and coincides
with it whenever every batch is full.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, GraphError
from .graph import Model
from .layers import softmax
from .ppm import write_pgm

N_CLASSES = 3


@dataclass
class ConfusionMatrix:
    """3x3 counts; rows are true classes, columns predicted (1-based ids)."""

    counts: np.ndarray = field(
        default_factory=lambda: np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    )

    def add(self, true_cls: np.ndarray, pred_cls: np.ndarray) -> None:
        for t, p in zip(true_cls, pred_cls):
            self.counts[t - 1, p - 1] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total


@dataclass
class MetricsReport:
    task: str
    batch_size: int
    batches: int
    frames_evaluated: int
    frames_dropped: int
    batch_accuracy: float | None = None
    global_accuracy: float | None = None
    mean_l1: float | None = None
    confusion: ConfusionMatrix | None = None

    def to_text(self) -> str:
        lines = [
            f"task: {self.task}",
            f"batch_size: {self.batch_size}",
            f"batches: {self.batches}",
            f"frames_evaluated: {self.frames_evaluated}",
            f"frames_dropped: {self.frames_dropped}",
        ]
        if self.batch_accuracy is not None:
            lines.append(f"mean_batch_accuracy: {self.batch_accuracy:.6f}")
            lines.append(f"global_accuracy: {self.global_accuracy:.6f}")
        if self.mean_l1 is not None:
            lines.append(f"mean_l1_degrees: {self.mean_l1:.6f}")
        if self.confusion is not None:
            lines.append("confusion_matrix (rows true 1..3, cols predicted 1..3):")
            for row in self.confusion.counts:
                lines.append("  " + " ".join(f"{v:8d}" for v in row))
        return "\n".join(lines) + "\n"


def _batched(inputs: dict[str, np.ndarray], targets: np.ndarray, batch_size: int):
    n = targets.shape[0]
    batches = n // batch_size
    if batches == 0:
        raise DataError(
            f"split of {n} frames yields no full batch of {batch_size}"
        )
    for b in range(batches):
        sl = slice(b * batch_size, (b + 1) * batch_size)
        yield {name: arr[sl] for name, arr in inputs.items()}, targets[sl]


def eval_classification(model: Model, inputs, targets,
                        batch_size: int = 64) -> MetricsReport:
    """Accuracy and confusion matrix for a 3-class head, full batches only."""
    if model.output_kind() != "softmax_head":
        raise GraphError(
            f"classification eval needs a softmax head, model ends in "
            f"'{model.output_kind()}'"
        )
    n = targets.shape[0]
    batches = n // batch_size
    confusion = ConfusionMatrix()
    accs = []
    for xb, yb in _batched(inputs, targets, batch_size):
        logits = model.forward(xb, mode="eval")
        pred = logits.argmax(axis=1) + 1
        accs.append(float(np.mean(pred == yb)))
        confusion.add(yb.astype(int), pred.astype(int))
    return MetricsReport(
        task="discrete",
        batch_size=batch_size,
        batches=batches,
        frames_evaluated=batches * batch_size,
        frames_dropped=n - batches * batch_size,
        batch_accuracy=float(np.mean(accs)),
        global_accuracy=confusion.accuracy,
        confusion=confusion,
    )


def eval_regression(model: Model, inputs, targets,
                    batch_size: int = 64) -> MetricsReport:
    """Mean absolute deviation in degrees over evaluated frames."""
    if model.output_kind() != "clamp_scale":
        raise GraphError(
            f"regression eval needs a clamped head, model ends in "
            f"'{model.output_kind()}'"
        )
    n = targets.shape[0]
    batches = n // batch_size
    abs_sum, count = 0.0, 0
    for xb, yb in _batched(inputs, targets, batch_size):
        out = model.forward(xb, mode="eval")
        abs_sum += float(np.abs(out - yb).sum())
        count += yb.size
    return MetricsReport(
        task="real",
        batch_size=batch_size,
        batches=batches,
        frames_evaluated=batches * batch_size,
        frames_dropped=n - batches * batch_size,
        mean_l1=abs_sum / count,
    )


def predict_proba(model: Model, inputs) -> np.ndarray:
    """Softmax class probabilities from a classification model."""
    return softmax(model.forward(inputs, mode="eval"))


def default_activation_layer(model: Model) -> str:
    """The ReLU after the last hidden FC layer, else the head's input."""
    candidates = [n for n in model.order if n.name.endswith("_relu")
                  and n.layer.kind == "relu"]
    if candidates:
        return candidates[-1].name
    return model.output_node().inputs[0]


def export_activations(model: Model, inputs, targets, path,
                       layer: str | None = None, batch_size: int = 64) -> int:
    """Write one tab-delimited activation row per evaluated frame.

    Header records the layer name and width. Rows follow split order over
    full batches; returns the number of rows written.
    """
    if layer is None:
        layer = default_activation_layer(model)
    if layer not in model.layers:
        raise GraphError(
            f"layer '{layer}' not in model; available: {model.node_names()}"
        )
    width = int(np.prod(model.shapes[layer]))
    rows = 0
    with open(path, "w") as fh:
        fh.write(f"# layer={layer} width={width}\n")
        fh.write("\t".join(f"a{i}" for i in range(width)) + "\tlabel\n")
        for xb, yb in _batched(inputs, targets, batch_size):
            capture = {layer: None}
            model.forward(xb, mode="eval", capture=capture)
            acts = capture[layer].reshape(len(yb), -1)
            for row, label in zip(acts, yb):
                vals = "\t".join(f"{v:.7g}" for v in row)
                label_txt = (f"{label:.6g}" if np.ndim(label) == 0
                             else ",".join(f"{v:.6g}" for v in np.ravel(label)))
                fh.write(f"{vals}\t{label_txt}\n")
                rows += 1
    return rows


def filter_to_pgm(filter_slice: np.ndarray) -> np.ndarray:
    """Min-max normalize one k x k filter slice to uint8; constant maps to 128."""
    lo, hi = float(filter_slice.min()), float(filter_slice.max())
    if hi == lo:
        return np.full(filter_slice.shape, 128, dtype=np.uint8)
    scaled = (filter_slice - lo) / (hi - lo) * 255.0
    return np.rint(scaled).astype(np.uint8)


def export_filters(model: Model, out_dir) -> list[str]:
    """Write every conv filter slice as a PGM; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for node in model.order:
        if node.layer.kind != "conv":
            continue
        weights = model.layers[node.name].weight.value
        out_depth, in_depth = weights.shape[0], weights.shape[1]
        for o in range(out_depth):
            for i in range(in_depth):
                name = f"{node.name}_o{o:03d}_i{i:03d}.pgm"
                path = os.path.join(out_dir, name)
                write_pgm(path, filter_to_pgm(weights[o, i]))
                written.append(path)
    return written
