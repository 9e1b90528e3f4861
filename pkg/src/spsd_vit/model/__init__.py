from .checkpoint import load_checkpoint, save_checkpoint
from .config import NetworkConfig
from .vit import ForwardBundle, VisionTransformer, init_params, trunc_normal

__all__ = [
    "ForwardBundle",
    "NetworkConfig",
    "VisionTransformer",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "trunc_normal",
]
