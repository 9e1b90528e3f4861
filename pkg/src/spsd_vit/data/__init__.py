from .augment import AugmentConfig, augment, augment_batch, channel_stats, normalize_only
from .dataset import DomainDataset, split_train_val
from .folder import (
    load_dataset_root,
    load_domain_folder,
    save_dataset_root,
    save_domain_folder,
)
from .synthetic import CUE_PALETTE, SyntheticDomainSpec, generate_synthetic

__all__ = [
    "AugmentConfig",
    "CUE_PALETTE",
    "DomainDataset",
    "SyntheticDomainSpec",
    "augment",
    "augment_batch",
    "channel_stats",
    "generate_synthetic",
    "load_dataset_root",
    "load_domain_folder",
    "normalize_only",
    "save_dataset_root",
    "save_domain_folder",
    "split_train_val",
]
