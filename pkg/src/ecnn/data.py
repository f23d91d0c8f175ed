"""FER-format CSV loading, mean normalisation, flip augmentation, batching.

Pipeline order used throughout the package: load, fit the mean on the raw
training split, augment the training split with horizontal flips of the raw
pixels, then subtract the raw-training mean from every split.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError
from .tensor import hflip

IMAGE_SIDE = 48
NUM_PIXELS = IMAGE_SIDE * IMAGE_SIDE
NUM_CLASSES = 7
USAGE_TO_SPLIT = {"Training": "train", "PublicTest": "val", "PrivateTest": "test"}
SPLIT_TO_USAGE = {v: k for k, v in USAGE_TO_SPLIT.items()}


@dataclass
class Dataset:
    images: np.ndarray  # [N,1,48,48]
    labels: np.ndarray  # [N] int64 in [0, 6]
    split: str

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.labels) != len(self.images):
            raise DataError(
                f"{len(self.labels)} labels for images of shape {self.images.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise DataError("labels must lie in [0, 6]")

    def __len__(self):
        return len(self.labels)

    def take(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.split)


@dataclass
class NormState:
    mean_image: np.ndarray  # [1,1,48,48]


def load_fer_csv(path, limit=None):
    """Read ``emotion,pixels,Usage`` rows into (train, val, test) datasets.

    ``limit`` maps split name to a maximum sample count, keeping the first
    rows in file order (used for desk-scale subsets).
    """
    buckets = {s: ([], []) for s in SPLIT_TO_USAGE}
    limit = limit or {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if lineno == 1 and row and not row[0].strip().isdigit():
                continue
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            label_txt, pixels_txt, usage = (f.strip() for f in row)
            if not label_txt.isdigit() or int(label_txt) >= NUM_CLASSES:
                raise DataError(f"{path}:{lineno}: label {label_txt!r} not in 0..6")
            split = USAGE_TO_SPLIT.get(usage)
            if split is None:
                raise DataError(f"{path}:{lineno}: unknown Usage {usage!r}")
            cap = limit.get(split)
            if cap is not None and len(buckets[split][1]) >= cap:
                continue
            pixels = pixels_txt.split()
            if len(pixels) != NUM_PIXELS:
                raise DataError(f"{path}:{lineno}: expected {NUM_PIXELS} pixels, got {len(pixels)}")
            try:
                img = np.array(pixels, dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric pixel") from None
            buckets[split][0].append(img)
            buckets[split][1].append(int(label_txt))

    out = []
    for split in ("train", "val", "test"):
        imgs, labels = buckets[split]
        arr = (np.stack(imgs) if imgs else np.empty((0, NUM_PIXELS)))
        out.append(Dataset(arr.reshape(-1, 1, IMAGE_SIDE, IMAGE_SIDE), labels, split))
    return tuple(out)


def write_fer_csv(path, datasets):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["emotion", "pixels", "Usage"])
        for d in datasets:
            for img, label in zip(d.images, d.labels):
                pix = " ".join(str(int(v)) for v in img.ravel())
                w.writerow([int(label), pix, SPLIT_TO_USAGE[d.split]])


def default_data_path(explicit=None):
    return explicit or os.environ.get("ECNN_DATA")


def fit_normalizer(train):
    if len(train) == 0:
        raise DataError("cannot fit a normaliser on an empty dataset")
    return NormState(train.images.mean(axis=0, keepdims=True))


def apply_normalizer(d, state):
    return Dataset(d.images - state.mean_image, d.labels, d.split)


def augment_hflip(train):
    """Originals followed by their mirror images; labels repeat in order."""
    if train.split != "train":
        raise UsageError(f"flip augmentation applies to the training split, not {train.split!r}")
    return Dataset(np.concatenate([train.images, hflip(train.images)]),
                   np.concatenate([train.labels, train.labels]), "train")


def prepare(train, val, test, augment=True):
    """Apply the fixed pipeline; returns normalised splits, the norm state and
    the raw (un-normalised) augmented training images for HOG extraction."""
    norm = fit_normalizer(train)
    raw_train = augment_hflip(train) if augment else train
    return (apply_normalizer(raw_train, norm), apply_normalizer(val, norm),
            apply_normalizer(test, norm), norm, raw_train)


def batch_indices(n, batch, seed, epoch):
    if batch < 1:
        raise UsageError("batch size must be at least 1")
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def batch_iter(d, batch, seed, epoch):
    for idx in batch_indices(len(d), batch, seed, epoch):
        yield d.images[idx], d.labels[idx]


def synthetic_faces(n, seed=0, split="train", noise=20.0):
    """Class-dependent 48x48 patterns with noise, in raw pixel units.

    Each class gets a fixed random low-frequency template; samples add
    Gaussian noise and clip to [0, 255]. Useful for demos and tests where
    the real dataset is unavailable.
    """
    rng = np.random.default_rng(seed)
    trng = np.random.default_rng(12345)
    coarse = trng.uniform(40, 215, size=(NUM_CLASSES, 6, 6))
    templates = np.kron(coarse, np.ones((8, 8)))
    labels = rng.integers(0, NUM_CLASSES, size=n)
    imgs = templates[labels] + noise * rng.standard_normal((n, IMAGE_SIDE, IMAGE_SIDE))
    imgs = np.clip(np.rint(imgs), 0, 255)
    return Dataset(imgs.reshape(n, 1, IMAGE_SIDE, IMAGE_SIDE), labels, split)
