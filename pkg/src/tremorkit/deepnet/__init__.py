from .augment import AugmentConfig, AugmentParams, apply, augment, identity_params, sample_params
from .model import (ArchConfig, ConvBlock, ConvLSTM, TooShortClip,
                    load_checkpoint, save_checkpoint, spatial_chain, temporal_chain)
from .train import (Divergence, EpochStats, TrainConfig, TrainResult,
                    evaluate_loss, pad_clips, predict, train)

__all__ = ["AugmentConfig", "AugmentParams", "apply", "augment", "identity_params",
           "sample_params", "ArchConfig", "ConvBlock", "ConvLSTM", "TooShortClip",
           "load_checkpoint", "save_checkpoint", "spatial_chain", "temporal_chain",
           "Divergence", "EpochStats", "TrainConfig", "TrainResult",
           "evaluate_loss", "pad_clips", "predict", "train"]
