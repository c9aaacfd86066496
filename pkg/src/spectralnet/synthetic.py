"""Generators for synthetic cubes used by tests and demo scripts."""

from __future__ import annotations

import numpy as np


def class_signatures(n_classes: int, bands: int, rng: np.random.Generator) -> np.ndarray:
    """Random spectra rescaled so the closest pair is exactly distance 1 apart."""
    sig = rng.normal(size=(n_classes, bands))
    d = np.linalg.norm(sig[:, None] - sig[None], axis=-1)
    d[np.diag_indices(n_classes)] = np.inf
    return sig / d.min()


def quadrant_labels(size: int, rng: np.random.Generator) -> np.ndarray:
    """Four rectangular regions (labels 1..4) split at a random row and column near the centre."""
    lo, hi = size * 3 // 8, size * 5 // 8
    r0 = int(rng.integers(lo, hi + 1))
    c0 = int(rng.integers(lo, hi + 1))
    labels = np.empty((size, size), dtype=np.int64)
    labels[:r0, :c0] = 1
    labels[:r0, c0:] = 2
    labels[r0:, :c0] = 3
    labels[r0:, c0:] = 4
    return labels


def signature_cube(
    size: int = 32,
    bands: int = 8,
    noise: float = 0.2,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """(size, size, bands) cube of 4 classes: signature + N(0, noise^2), noise relative to min separation."""
    rng = np.random.default_rng(seed)
    labels = quadrant_labels(size, rng)
    sig = class_signatures(4, bands, rng)
    data = sig[labels - 1] + rng.normal(0.0, noise, size=(size, size, bands))
    return data, labels


def factor_data(
    n: int,
    loadings: np.ndarray,
    noise: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Observations ``x = f @ loadings.T + eps`` with independent unit-variance factors."""
    f = rng.normal(size=(n, loadings.shape[1]))
    x = f @ loadings.T + rng.normal(0.0, noise, size=(n, loadings.shape[0]))
    return x, f


def block_loadings(bands: int, strengths) -> np.ndarray:
    """Each factor loads on one contiguous block of bands with its own strength."""
    k = len(strengths)
    out = np.zeros((bands, k))
    for j, block in enumerate(np.array_split(np.arange(bands), k)):
        out[block, j] = strengths[j]
    return out
