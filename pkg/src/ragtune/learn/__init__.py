"""Pool construction, online identification, losses and the training loop."""

from .identify import NEGATIVE, POSITIVE, UNDECIDED, identify_closedset, identify_freeform
from .losses import info_nce, kl_divergence, kl_loss, total_loss
from .optim import AdamW
from .pools import (
    OfflineAborted,
    OfflineResult,
    Pools,
    offline_from_json,
    offline_prepare,
    offline_to_json,
    pools_from_records,
)
from .sampling import TrainSample, scan_and_sample, warmup_sample
from .train import FULL_SCALE_SETTINGS, TrainConfig, TrainResult, count_ondemand, train, warmup_epochs

__all__ = [
    "NEGATIVE", "POSITIVE", "UNDECIDED", "identify_closedset", "identify_freeform",
    "info_nce", "kl_divergence", "kl_loss", "total_loss", "AdamW",
    "OfflineAborted", "OfflineResult", "Pools", "offline_prepare", "pools_from_records",
    "offline_to_json", "offline_from_json",
    "TrainSample", "scan_and_sample", "warmup_sample",
    "FULL_SCALE_SETTINGS", "TrainConfig", "TrainResult", "count_ondemand", "train", "warmup_epochs",
]
