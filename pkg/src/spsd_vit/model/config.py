"""Network hyperparameter container and validation."""

from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class NetworkConfig:
    """Shape hyperparameters of the vision transformer.

    ``num_blocks`` must be at least 2 so that the intermediate-classifier
    routes ``{1, ..., num_blocks - 1}`` are non-empty.
    """

    num_classes: int
    image_size: int = 32
    patch_size: int = 4
    num_blocks: int = 6
    dim: int = 128
    num_heads: int = 4
    mlp_ratio: float = 4.0
    layer_norm_eps: float = 1e-6

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.image_size <= 0 or self.patch_size <= 0:
            raise ConfigError("image_size and patch_size must be positive")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by "
                f"patch_size {self.patch_size}"
            )
        if self.num_blocks < 2:
            raise ConfigError(f"num_blocks must be >= 2, got {self.num_blocks}")
        if self.dim <= 0 or self.num_heads <= 0:
            raise ConfigError("dim and num_heads must be positive")
        if self.dim % self.num_heads != 0:
            raise ConfigError(
                f"dim {self.dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.mlp_hidden < 1:
            raise ConfigError("mlp_ratio too small: hidden width would be < 1")

    @property
    def grid_size(self):
        """Patches per image side."""
        return self.image_size // self.patch_size

    @property
    def num_patches(self):
        return self.grid_size * self.grid_size

    @property
    def num_tokens(self):
        """Patch tokens plus the class token."""
        return self.num_patches + 1

    @property
    def head_dim(self):
        return self.dim // self.num_heads

    @property
    def mlp_hidden(self):
        return int(self.dim * self.mlp_ratio)

    @property
    def patch_dim(self):
        """Flattened RGB patch length."""
        return self.patch_size * self.patch_size * 3
