"""Channel normalization, mirrored patch extraction and stratified splits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .polsar_io import CoherencyImage, LabelMap
from .seeding import derive_rng

STD_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Patch:
    data: np.ndarray        # (window, window, 6) complex
    center_row: int
    center_col: int
    label: int

    @property
    def window(self) -> int:
        return self.data.shape[0]


@dataclass
class SplitSpec:
    ratio: float
    seed: int
    train: dict = field(default_factory=dict)   # class id -> (n, 2) int array of (row, col)
    test: dict = field(default_factory=dict)

    def train_counts(self) -> dict:
        return {c: len(v) for c, v in self.train.items()}

    def test_counts(self) -> dict:
        return {c: len(v) for c, v in self.test.items()}


def normalize_channels(image: CoherencyImage) -> CoherencyImage:
    """Zero-mean, unit-std (population) for each real plane, re and im separately.

    Planes whose std is below 1e-12 (such as the imaginary part of a
    diagonal channel) become all zeros.
    """
    planes = image.data.view(np.float64).reshape(image.height, image.width, 12)
    mean = planes.mean(axis=(0, 1))
    std = planes.std(axis=(0, 1))
    ok = std >= STD_FLOOR
    out = np.zeros_like(planes)
    out[..., ok] = (planes[..., ok] - mean[ok]) / std[ok]
    return CoherencyImage(out.view(np.complex128).reshape(image.height, image.width, 6))


def reflect_index(idx, n: int) -> np.ndarray:
    """Mirror indices about the edges, excluding the edge sample itself."""
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _check_window(window):
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")


def extract_patches(image: CoherencyImage, rows, cols, window: int) -> np.ndarray:
    """Stack of ``(N, window, window, 6)`` mirrored patches centered at ``(rows, cols)``."""
    _check_window(window)
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    cols = np.asarray(cols, dtype=np.int64).reshape(-1)
    if np.any((rows < 0) | (rows >= image.height) | (cols < 0) | (cols >= image.width)):
        raise ValueError("center out of bounds")
    offsets = np.arange(window) - window // 2
    ri = reflect_index(rows[:, None] + offsets, image.height)
    ci = reflect_index(cols[:, None] + offsets, image.width)
    return image.data[ri[:, :, None], ci[:, None, :]]


def extract_patch(image: CoherencyImage, row: int, col: int, window: int, label: int = 0) -> Patch:
    data = extract_patches(image, [row], [col], window)[0]
    return Patch(data, int(row), int(col), int(label))


def train_size(ratio: float, count: int) -> int:
    # round half up; Python's round() would send 0.5 to the even neighbour
    return max(1, math.floor(ratio * count + 0.5))


def stratified_split(label_map: LabelMap, ratio: float, seed: int) -> SplitSpec:
    """Per class, a seeded uniform subset of ``max(1, round(ratio * n))`` pixels trains."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    rng = derive_rng(seed, "split")
    split = SplitSpec(ratio=ratio, seed=seed)
    labels = label_map.labels
    for c in range(1, label_map.num_classes + 1):
        rr, cc = np.nonzero(labels == c)
        if rr.size == 0:
            raise ValueError(f"empty class: class {c} has no labeled pixels")
        coords = np.stack([rr, cc], axis=1)
        order = rng.permutation(len(coords))
        n_train = train_size(ratio, len(coords))
        train_idx = np.sort(order[:n_train])
        test_idx = np.sort(order[n_train:])
        split.train[c] = coords[train_idx]
        split.test[c] = coords[test_idx]
    return split


def _patches_for(image, label_map, coords_by_class, window):
    out = []
    for c in sorted(coords_by_class):
        coords = coords_by_class[c]
        if len(coords) == 0:
            continue
        data = extract_patches(image, coords[:, 0], coords[:, 1], window)
        for (r, col), block in zip(coords, data):
            out.append(Patch(block, int(r), int(col), int(label_map.labels[r, col])))
    return out


def build_dataset(image: CoherencyImage, label_map: LabelMap, split: SplitSpec, window: int):
    """``(train, test)`` patch lists ordered by class id, then row, then column."""
    if (image.height, image.width) != label_map.shape:
        raise ValueError("dimension mismatch between image and label map")
    return (_patches_for(image, label_map, split.train, window),
            _patches_for(image, label_map, split.test, window))


def stack_patches(patches):
    """``(data, labels)`` arrays for a patch list."""
    if not patches:
        return np.empty((0, 0, 0, 6), dtype=np.complex128), np.empty(0, dtype=np.int64)
    return (np.stack([p.data for p in patches]),
            np.array([p.label for p in patches], dtype=np.int64))
