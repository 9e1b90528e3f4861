"""In-memory dataset container and the train/validation split."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError


@dataclass
class DomainDataset:
    """Images from one or more domains.

    ``images`` is (N, H, W, 3) float32 in [0, 1]; ``labels`` and
    ``domain_ids`` are (N,) int64.
    """

    images: np.ndarray
    labels: np.ndarray
    domain_ids: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ShapeError(f"images must be (N, H, W, 3), got {self.images.shape}")
        n = self.images.shape[0]
        if self.labels.shape != (n,) or self.domain_ids.shape != (n,):
            raise ShapeError("labels/domain_ids length does not match images")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ShapeError(
                f"labels outside [0, {self.num_classes}): "
                f"range [{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_size(self):
        return self.images.shape[1]

    def domains(self):
        return sorted(int(d) for d in np.unique(self.domain_ids))

    def subset(self, indices):
        return DomainDataset(
            images=self.images[indices],
            labels=self.labels[indices],
            domain_ids=self.domain_ids[indices],
            num_classes=self.num_classes,
        )

    def restrict_domains(self, wanted):
        mask = np.isin(self.domain_ids, list(wanted))
        return self.subset(np.nonzero(mask)[0])

    @staticmethod
    def concatenate(parts):
        parts = list(parts)
        if not parts:
            raise ValueError("cannot concatenate zero datasets")
        C = parts[0].num_classes
        if any(p.num_classes != C for p in parts):
            raise ConfigError("datasets disagree on num_classes")
        return DomainDataset(
            images=np.concatenate([p.images for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            domain_ids=np.concatenate([p.domain_ids for p in parts]),
            num_classes=C,
        )


def split_train_val(dataset, train_fraction=0.8, seed=0):
    """Per-class stratified split into (train, val).

    The train share of each class is allocated by largest-remainder
    rounding so the pooled train size equals ``round(train_fraction*N)``
    whenever class shares allow, every sample lands in exactly one side,
    and the assignment is a pure function of ``seed`` (an int or a
    sequence of ints).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    total_train = int(round(train_fraction * n))

    class_indices = [
        np.nonzero(dataset.labels == c)[0] for c in range(dataset.num_classes)
    ]
    shares = [train_fraction * idx.size for idx in class_indices]
    base = [int(np.floor(s)) for s in shares]
    remainders = [s - b for s, b in zip(shares, base)]
    leftover = total_train - sum(base)
    # hand the leftover units to the largest remainders (ties -> lower class id)
    order = sorted(range(dataset.num_classes), key=lambda c: (-remainders[c], c))
    take = dict.fromkeys(range(dataset.num_classes), 0)
    for c in order[:max(leftover, 0)]:
        take[c] = 1

    seed_entropy = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    train_parts, val_parts = [], []
    for c, idx in enumerate(class_indices):
        k = min(base[c] + take[c], idx.size)
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(seed_entropy + [c]))
        )
        perm = rng.permutation(idx.size)
        shuffled = idx[perm]
        train_parts.append(shuffled[:k])
        val_parts.append(shuffled[k:])

    train_idx = np.sort(np.concatenate(train_parts)).astype(np.intp)
    val_idx = np.sort(np.concatenate(val_parts)).astype(np.intp)
    return dataset.subset(train_idx), dataset.subset(val_idx)
