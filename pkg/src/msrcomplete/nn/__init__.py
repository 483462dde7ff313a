from .layers import BatchNorm, Conv2D, Dense, PReLU, glorot_uniform, same_padding
from .losses import loss_l1, loss_l2
from .network import (
    DESK_CHANNELS,
    PAPER_CHANNELS,
    PAPER_KERNELS,
    Network,
    NetworkSpec,
    TrainingError,
    grad_check,
    make_loss,
    train,
)
from .optim import AdamState, adam_step
