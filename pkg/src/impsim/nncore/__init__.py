"""Minimal numpy neural-network substrate with manual backpropagation."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_function, check_layer, numeric_grad, rel_error
from .layers import (GELU, BackwardError, BatchNorm, Conv1d, Dense, Dropout, Flatten, Layer, MaxPool1d, ReLU,
                     Reshape, Sequential, ShapeError, build_layer)
from .losses import cross_entropy, log_softmax, mse, softmax
from .model import Model
from .optim import AdamW, adamw_step
from .training import (EarlyStopping, blocked_split, PlateauScheduler, TrainSchedule, early_stop, minibatches, plateau_scheduler,
                       split_train_val, stage_rng)
