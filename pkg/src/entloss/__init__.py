"""Entropy-regularized classification losses with a desk-scale training stack.

Core pieces: the MIX-ENT / MIN-ENT loss family with learnable regularizer
weights and log base (losses), a small MLP with analytic backprop (net),
IDX-format ingestion with label remapping (data), a two-group optimizer loop
with checkpoints (train), a successive-halving sweep (sweep), and a CLI
(cli).
"""

from .losses import (
    Beta1Mode,
    LossKind,
    LossParams,
    LossValue,
    ProbVector,
    SmoothedTarget,
    cross_entropy,
    entropy,
    kl_divergence,
    loss_backward,
    min_ent_loss,
    mix_ent_loss,
    softmax,
    swapped_cross_entropy,
)
from .net import NetConfig, NetState
from .train import MetricsRecord, OptimizerKind, TrainConfig
from .sweep import SearchSpace, TrialConfig, TrialResult, TrialStatus

__all__ = [
    "Beta1Mode", "LossKind", "LossParams", "LossValue", "ProbVector",
    "SmoothedTarget", "cross_entropy", "entropy", "kl_divergence",
    "loss_backward", "min_ent_loss", "mix_ent_loss", "softmax",
    "swapped_cross_entropy", "NetConfig", "NetState", "MetricsRecord",
    "OptimizerKind", "TrainConfig", "SearchSpace", "TrialConfig",
    "TrialResult", "TrialStatus",
]

__version__ = "0.1.0"
