from .layers import BatchNorm2D, Conv2D, MaxPool2x2, ReLU, TConv2x2
from .unet import UNet, UNetSpec
from .adadelta import Adadelta
from .patches import patch_split, patch_merge, patch_split_overlapping
from .training import (
    TrainConfig,
    TrainingDiverged,
    accnet_config,
    procnet_config,
    train_recon_net,
    train_t1_net,
    infer_recon_net,
    infer_t1_net,
)

__all__ = [
    "Adadelta", "BatchNorm2D", "Conv2D", "MaxPool2x2", "ReLU", "TConv2x2",
    "TrainConfig", "TrainingDiverged", "UNet", "UNetSpec",
    "accnet_config", "procnet_config",
    "infer_recon_net", "infer_t1_net",
    "patch_merge", "patch_split", "patch_split_overlapping",
    "train_recon_net", "train_t1_net",
]
