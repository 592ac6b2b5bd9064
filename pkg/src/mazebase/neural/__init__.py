"""Autodiff core, policy models, optimizer and checkpoints."""
from .autodiff import Tensor, param
from .checkpoint import CheckpointError
from .models import (DEFAULT_LR, MODEL_KINDS, LinearModel, MemNNModel, MemoryBatch, MLPModel, Model,
                     NumericError, PolicyOutput, ShapeError, build_model, greedy_action, sample_action,
                     softmax)
from .optim import RMSProp, rmsprop_step

__all__ = [
    "Tensor", "param", "CheckpointError", "DEFAULT_LR", "MODEL_KINDS", "LinearModel", "MemNNModel",
    "MemoryBatch", "MLPModel", "Model", "NumericError", "PolicyOutput", "ShapeError", "build_model",
    "greedy_action", "sample_action", "softmax", "RMSProp", "rmsprop_step",
]
