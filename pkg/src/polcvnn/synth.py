"""Synthetic multi-look PolSAR scenes.

Each class is a circular complex Gaussian scattering model: a Pauli vector
``k ~ CN(0, sigma)`` drawn ``looks`` times and averaged into
``T = (1/n) sum k k^H``, which makes ``T`` complex-Wishart distributed with
mean ``sigma``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polsar_io import CoherencyImage, LabelMap
from .seeding import derive_rng

UPPER = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
LAYOUTS = ("stripes", "checkerboard")


@dataclass(frozen=True, eq=False)
class ClassModel:
    sigma: np.ndarray
    looks: int = 4

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=np.complex128)
        if sigma.shape != (3, 3):
            raise ValueError("sigma must be 3x3")
        if not np.allclose(sigma, sigma.conj().T, rtol=0, atol=1e-12):
            raise ValueError("sigma must be Hermitian")
        if self.looks < 3:
            raise ValueError("looks must be >= 3")
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise ValueError("covariance not positive definite") from None
        if np.linalg.eigvalsh(sigma).min() <= 0:
            raise ValueError("covariance not positive definite")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def diagonal(cls, t11, t22, t33, looks=4):
        return cls(np.diag([t11, t22, t33]).astype(np.complex128), looks)


def _sample(model: ClassModel, count: int, rng: np.random.Generator) -> np.ndarray:
    shape = (count, model.looks, 3)
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    k = g @ model._chol.T                     # rows are k_j^T with k_j = chol @ g_j
    t = np.einsum("nli,nlj->nij", k, k.conj()) / model.looks
    out = np.stack([t[:, i, j] for i, j in UPPER], axis=-1)
    out[:, [0, 3, 5]] = out[:, [0, 3, 5]].real
    return out


def sample_coherency(model: ClassModel, seed: int) -> np.ndarray:
    """Six upper-triangle entries ``(T11, T12, T13, T22, T23, T33)`` of one multi-look T."""
    return _sample(model, 1, derive_rng(seed, "synth"))[0]


def layout_labels(num_classes: int, layout: str, height: int, width: int) -> np.ndarray:
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if height < num_classes or width < num_classes:
        raise ValueError("scene too small")
    rows, cols = np.mgrid[0:height, 0:width]
    if layout == "stripes":
        return (cols * num_classes // width + 1).astype(np.uint16)
    side = max(8, width // 8)
    return ((rows // side + cols // side) % num_classes + 1).astype(np.uint16)


def generate_scene(classes, layout: str, height: int, width: int, seed: int):
    """Return ``(CoherencyImage, LabelMap)`` with every pixel labeled."""
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    labels = layout_labels(len(classes), layout, height, width)
    data = np.zeros((height, width, 6), dtype=np.complex128)
    for c, model in enumerate(classes, start=1):
        mask = labels == c
        data[mask] = _sample(model, int(mask.sum()), derive_rng(seed, "synth", c))
    return CoherencyImage(data), LabelMap(labels, len(classes))


def separated_classes(num_classes: int, looks: int = 4):
    """Well-separated diagonal covariances, one dominant Pauli power per class.

    Beyond three classes the dominant power cycles and its level doubles.
    """
    out = []
    for c in range(num_classes):
        diag = [0.1, 0.1, 0.1]
        diag[c % 3] = 4.0 * 2 ** (c // 3)
        out.append(ClassModel.diagonal(*diag, looks=looks))
    return out
