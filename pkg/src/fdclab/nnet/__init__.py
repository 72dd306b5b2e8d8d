"""Small numpy CNN engine (conv/relu/pool/dense) with manual backprop."""
from .network import COMPACT_FDC, PRESETS, VGG16_FDC, Network, NetworkSpec, param_count
from .optim import TrainConfig, evaluate, train

__all__ = ["COMPACT_FDC", "PRESETS", "VGG16_FDC", "Network", "NetworkSpec", "param_count",
           "TrainConfig", "evaluate", "train"]
