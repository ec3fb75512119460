from .layers import BatchNorm, Conv1d, Dropout, Flatten, Linear, ReLU
from .losses import build_sim_matrix, logsumexp, loss_ce, loss_simloss, softmax
from .model import Model, load_model, save_calibration, save_model
from .network import ConvSpec, NetTopology, Network, desk_topology, param_count
from .optim import AdamW, cyclic_lr
from .training import (
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    accuracy,
    eval_logits,
    fit_temperature,
    train,
)

__all__ = [
    "AdamW", "BatchNorm", "Conv1d", "ConvSpec", "Dropout", "Flatten",
    "Linear", "Model", "NetTopology", "Network", "ReLU", "TrainConfig",
    "TrainResult", "TrainingDiverged", "accuracy", "build_sim_matrix",
    "cyclic_lr", "desk_topology", "eval_logits", "fit_temperature",
    "load_model", "logsumexp", "loss_ce", "loss_simloss", "param_count",
    "save_calibration", "save_model", "softmax", "train",
]
