"""conedrive: desk-scale end-to-end CNN driving controllers.

Steering classification and regression plus a brake/throttle DAG, built on a
small from-scratch layer set, with the supporting dataset pipeline,
shift-translation augmentation, evaluation, overlay rendering, and a
forward-latency harness.
"""

__version__ = "0.1.0"

from .data import (FramePair, SteeringClass, TelemetryRecord, discretize_steering,
                   pair_nearest, parse_telemetry, scale_signals, shift_augment,
                   split_60_20_20)
from .graph import LayerSpec, Model, ModelSpec
from .train import TrainConfig, lr_at_epoch, train
from .zoo import (make_brake_throttle_model, make_discrete_model,
                  make_realvalue_model)

__all__ = [
    "FramePair",
    "LayerSpec",
    "Model",
    "ModelSpec",
    "SteeringClass",
    "TelemetryRecord",
    "TrainConfig",
    "discretize_steering",
    "lr_at_epoch",
    "make_brake_throttle_model",
    "make_discrete_model",
    "make_realvalue_model",
    "pair_nearest",
    "parse_telemetry",
    "scale_signals",
    "shift_augment",
    "split_60_20_20",
    "train",
]
