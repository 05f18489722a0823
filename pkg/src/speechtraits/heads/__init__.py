"""Trainable prediction heads: layer weighting, pointwise-conv trunk, losses, trainer."""

from .losses import (
    ccc,
    ccc_grad,
    ccc_loss,
    ccc_loss_grad,
    kl_loss,
    kl_loss_grad,
    multilabel_loss,
    multilabel_loss_grad,
    scale_dimensional,
    sigmoid,
    softmax,
)
from .model import (
    HeadConfig,
    HeadWeights,
    MultitaskSpec,
    TaskSpec,
    age_sex_spec,
    forward,
    init_weights,
    layer_weights,
    single_task_spec,
    speech_flow_spec,
    weighted_layer_average,
)
from .train import Hyper, TrainResult, train_head
from .weights_io import load_weights, save_weights, serialize_weights, weights_fingerprint

__all__ = [
    "HeadConfig",
    "HeadWeights",
    "Hyper",
    "MultitaskSpec",
    "TaskSpec",
    "TrainResult",
    "age_sex_spec",
    "ccc",
    "ccc_grad",
    "ccc_loss",
    "ccc_loss_grad",
    "forward",
    "init_weights",
    "kl_loss",
    "kl_loss_grad",
    "layer_weights",
    "load_weights",
    "multilabel_loss",
    "multilabel_loss_grad",
    "save_weights",
    "scale_dimensional",
    "serialize_weights",
    "sigmoid",
    "single_task_spec",
    "softmax",
    "speech_flow_spec",
    "train_head",
    "weighted_layer_average",
    "weights_fingerprint",
]
