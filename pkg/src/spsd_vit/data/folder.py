"""On-disk dataset layout.

A dataset root contains one sub-directory per domain; each domain
directory holds image files plus ``labels.csv`` with the exact header
``filename,label``.  ``make-data`` additionally writes a
``data_manifest.json`` at the root recording class count and generator
settings, which the loader uses when present.
"""

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import IngestError
from .dataset import DomainDataset

LABELS_FILE = "labels.csv"
LABELS_HEADER = ["filename", "label"]
MANIFEST_FILE = "data_manifest.json"


def save_domain_folder(folder, images, labels):
    """Write images as 8-bit PNGs plus the labels file."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, (img, label) in enumerate(zip(images, labels)):
        name = f"{k:05d}.png"
        arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(folder / name)
        rows.append((name, int(label)))
    with open(folder / LABELS_FILE, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABELS_HEADER)
        writer.writerows(rows)


def save_dataset_root(root, dataset, specs=None, manifest_extra=None):
    """Write one folder per domain plus the root manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = {}
    if specs:
        names = {s.domain_id: s.name for s in specs}
    for d in dataset.domains():
        mask = dataset.domain_ids == d
        save_domain_folder(
            root / names.get(d, f"domain{d}"), dataset.images[mask], dataset.labels[mask]
        )
    manifest = {
        "num_classes": dataset.num_classes,
        "domains": {
            names.get(d, f"domain{d}"): int((dataset.domain_ids == d).sum())
            for d in dataset.domains()
        },
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    with open(root / MANIFEST_FILE, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_domain_folder(folder, domain_id=0, num_classes=None):
    """Read one domain directory into a :class:`DomainDataset`."""
    folder = Path(folder)
    labels_path = folder / LABELS_FILE
    if not labels_path.is_file():
        raise IngestError(f"missing labels file: {labels_path}")
    with open(labels_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LABELS_HEADER:
            raise IngestError(
                f"{labels_path}: bad header {header!r}, expected {LABELS_HEADER!r}"
            )
        rows = list(reader)

    images, labels = [], []
    seen = set()
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise IngestError(f"{labels_path}:{lineno}: expected 2 fields, got {row!r}")
        name, label_text = row
        if name in seen:
            raise IngestError(f"{labels_path}:{lineno}: duplicate filename {name!r}")
        seen.add(name)
        try:
            label = int(label_text)
        except ValueError:
            raise IngestError(
                f"{labels_path}:{lineno}: label {label_text!r} is not an integer"
            ) from None
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise IngestError(
                f"{labels_path}:{lineno}: label {label} outside "
                f"[0, {num_classes if num_classes is not None else '...'})"
            )
        path = folder / name
        if not path.is_file():
            raise IngestError(f"{labels_path}:{lineno}: image file missing: {path}")
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        images.append(arr)
        labels.append(label)

    if not images:
        raise IngestError(f"{labels_path}: no samples listed")
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise IngestError(f"{folder}: images disagree on shape: {sorted(shapes)}")
    labels = np.array(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return DomainDataset(
        images=np.stack(images),
        labels=labels,
        domain_ids=np.full(len(labels), domain_id, dtype=np.int64),
        num_classes=num_classes,
    )


def load_dataset_root(root):
    """Read every domain directory under ``root``, sorted by name.

    Domain ids are assigned by sort order.  Returns
    ``(datasets, domain_names)``.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"dataset root is not a directory: {root}")
    num_classes = None
    manifest_path = root / MANIFEST_FILE
    if manifest_path.is_file():
        try:
            manifest = json.loads(manifest_path.read_text())
            num_classes = int(manifest["num_classes"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"unreadable manifest {manifest_path}: {exc}") from exc
    folders = sorted(
        p for p in root.iterdir() if p.is_dir() and (p / LABELS_FILE).is_file()
    )
    if not folders:
        raise IngestError(f"no domain folders with a labels file under {root}")
    datasets = [
        load_domain_folder(folder, domain_id=i, num_classes=num_classes)
        for i, folder in enumerate(folders)
    ]
    if num_classes is None:
        top = max(ds.num_classes for ds in datasets)
        datasets = [
            DomainDataset(ds.images, ds.labels, ds.domain_ids, top) for ds in datasets
        ]
    return datasets, [f.name for f in folders]
