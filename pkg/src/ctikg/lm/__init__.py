from ctikg.lm.config import LmConfig, DESK_SCALE, PAPER_117M
from ctikg.lm.model import (
    gelu,
    layer_norm,
    scaled_dot_attention,
    multi_head_attention,
    forward,
)
from ctikg.lm.params import LmParams, init_params
from ctikg.lm.train import TrainState, loss_and_grads, train_step
from ctikg.lm.checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "LmConfig",
    "DESK_SCALE",
    "PAPER_117M",
    "LmParams",
    "init_params",
    "gelu",
    "layer_norm",
    "scaled_dot_attention",
    "multi_head_attention",
    "forward",
    "TrainState",
    "loss_and_grads",
    "train_step",
    "save_checkpoint",
    "load_checkpoint",
]
