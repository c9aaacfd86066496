"""Hyperspectral cube ingestion, band reduction, patch extraction and splitting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .factor import FactorModel, correlation, factor_scores, principal_axis
from .npyio import read_npy, write_npy


@dataclass
class HSICube:
    """``data`` is (M, N, R) band-last; ``labels`` is (M, N) with 0 meaning unlabelled."""

    data: np.ndarray
    labels: np.ndarray
    wavelength_range: tuple[float, float] | None = None
    band_means: np.ndarray | None = None
    band_stds: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.data.ndim != 3 or min(self.data.shape) == 0:
            raise ValueError(f"cube data must be a nonempty (M, N, R) array, got {self.data.shape}")
        if self.labels.shape != self.data.shape[:2]:
            raise ValueError(
                f"labels shape {self.labels.shape} does not match cube spatial shape {self.data.shape[:2]}"
            )
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("labels must be integers")
        if self.labels.min() < 0:
            raise ValueError("labels must be nonnegative")
        present = set(np.unique(self.labels).tolist()) - {0}
        missing = set(range(1, self.class_count + 1)) - present
        if missing:
            raise ValueError(f"classes {sorted(missing)} have no labelled pixel")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def class_count(self) -> int:
        return int(self.labels.max())


@dataclass
class ReducedCube:
    data: np.ndarray  # (M, N, B) factor scores
    loadings: np.ndarray
    uniquenesses: np.ndarray
    band_means: np.ndarray
    band_stds: np.ndarray
    iterations: int = 0
    heywood_bands: list[int] = field(default_factory=list)

    @property
    def bands(self) -> int:
        return self.data.shape[2]


def _integer_labels(raw: np.ndarray) -> np.ndarray:
    if np.issubdtype(raw.dtype, np.integer):
        return raw.astype(np.int64)
    if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
        raise ValueError("labels file holds non-integer values")
    return raw.astype(np.int64)


def load_cube(data_path, labels_path) -> HSICube:
    data = read_npy(data_path)
    raw_labels = read_npy(labels_path)
    if data.ndim != 3:
        raise ValueError(f"cube file must hold an (M, N, R) array, got shape {data.shape}")
    if raw_labels.shape != data.shape[:2]:
        raise ValueError(
            f"shape mismatch: labels {raw_labels.shape} vs cube spatial {data.shape[:2]}"
        )
    return HSICube(data.astype(np.float64), _integer_labels(raw_labels))


def standardize_bands(cube: HSICube) -> HSICube:
    flat = cube.data.reshape(-1, cube.data.shape[2])
    means = flat.mean(axis=0)
    stds = flat.std(axis=0)
    zero = np.flatnonzero(stds == 0)
    if zero.size:
        raise ValueError(f"bands {zero.tolist()} are constant; cannot standardise")
    z = (cube.data - means) / stds
    return replace(cube, data=z, band_means=means, band_stds=stds)


def _is_standardized(flat: np.ndarray, tol: float = 1e-6) -> bool:
    return bool(
        np.all(np.abs(flat.mean(axis=0)) <= tol) and np.all(np.abs(flat.std(axis=0) - 1.0) <= tol)
    )


def factor_analysis(
    cube: HSICube,
    n_factors: int,
    tol: float = 1e-4,
    max_iter: int = 100,
) -> tuple[ReducedCube, FactorModel]:
    """Reduce a standardised cube to ``n_factors`` regression-score bands."""
    m, n, r = cube.shape
    if not 1 <= n_factors < r:
        raise ValueError(f"need 1 <= n_factors < {r} bands, got {n_factors}")
    flat = cube.data.reshape(-1, r)
    if not _is_standardized(flat):
        raise ValueError("cube must be standardised first (see standardize_bands)")
    model = principal_axis(correlation(flat), n_factors, tol=tol, max_iter=max_iter)
    scores = factor_scores(flat, model).reshape(m, n, n_factors)
    reduced = ReducedCube(
        data=scores,
        loadings=model.loadings,
        uniquenesses=model.uniquenesses,
        band_means=cube.band_means if cube.band_means is not None else np.zeros(r),
        band_stds=cube.band_stds if cube.band_stds is not None else np.ones(r),
        iterations=model.iterations,
        heywood_bands=model.heywood_bands,
    )
    return reduced, model


def reduce_cube(cube: HSICube, n_factors: int, **kw) -> ReducedCube:
    return factor_analysis(standardize_bands(cube), n_factors, **kw)[0]


# --------------------------------------------------------------------------
# patches


@dataclass
class PatchSet:
    """Windows of a zero-padded reduced cube centred on labelled pixels.

    Patches are cut on demand from ``padded`` so large windows never need to
    be materialised all at once. ``labels`` are 0-based; ``train`` is the split
    mask (``None`` until :func:`stratified_split`).
    """

    padded: np.ndarray  # (M + S, N + S, B)
    coords: np.ndarray  # (count, 2) row/col in the unpadded cube
    labels: np.ndarray  # (count,)
    size: int
    class_count: int
    train: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def bands(self) -> int:
        return self.padded.shape[2]

    def batch(self, indices) -> np.ndarray:
        """Patches ``(k, S, S, B)`` for the given row indices."""
        idx = np.asarray(indices, dtype=np.intp)
        s = self.size
        out = np.empty((len(idx), s, s, self.bands))
        for k, (r, c) in enumerate(self.coords[idx]):
            out[k] = self.padded[r : r + s, c : c + s]
        return out

    @property
    def patches(self) -> np.ndarray:
        return self.batch(np.arange(len(self)))

    def subset(self, mask) -> "PatchSet":
        mask = np.asarray(mask)
        return PatchSet(
            padded=self.padded,
            coords=self.coords[mask],
            labels=self.labels[mask],
            size=self.size,
            class_count=self.class_count,
            train=None if self.train is None else self.train[mask],
        )

    def train_set(self) -> "PatchSet":
        if self.train is None:
            raise ValueError("patch set has not been split")
        return self.subset(self.train)

    def test_set(self) -> "PatchSet":
        if self.train is None:
            raise ValueError("patch set has not been split")
        return self.subset(~self.train)


def pad_cube(data: np.ndarray, size: int) -> np.ndarray:
    half = size // 2
    return np.pad(data, ((half, half), (half, half), (0, 0)))


def extract_patches(reduced, labels: np.ndarray, size: int) -> PatchSet:
    """One ``size x size`` window per labelled pixel, row-major pixel order.

    The window for pixel ``(r, c)`` covers rows ``r - size/2 .. r + size/2 - 1``
    (likewise columns); anything outside the cube reads as 0.
    """
    data = reduced.data if isinstance(reduced, ReducedCube) else np.asarray(reduced, dtype=np.float64)
    labels = np.asarray(labels)
    m, n = data.shape[:2]
    if labels.shape != (m, n):
        raise ValueError(f"labels shape {labels.shape} != cube spatial {(m, n)}")
    if size < 2 or size % 2:
        raise ValueError(f"patch size must be a positive even integer, got {size}")
    if size > 2 * min(m, n):
        raise ValueError(f"patch size {size} exceeds twice the smaller cube extent {min(m, n)}")
    rows, cols = np.nonzero(labels > 0)
    if rows.size == 0:
        raise ValueError("no labelled pixels")
    class_count = int(labels.max())
    return PatchSet(
        padded=pad_cube(data, size),
        coords=np.stack([rows, cols], axis=1).astype(np.int64),
        labels=labels[rows, cols].astype(np.int64) - 1,
        size=size,
        class_count=class_count,
    )


def train_count(n: int, fraction: float) -> int:
    """Round half up, at least one."""
    return max(1, int(np.floor(fraction * n + 0.5)))


def stratified_split(patchset: PatchSet, fraction: float, seed: int) -> PatchSet:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"train fraction must lie in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    train = np.zeros(len(patchset), dtype=bool)
    for k in range(patchset.class_count):
        members = np.flatnonzero(patchset.labels == k)
        if members.size == 0:
            raise ValueError(f"class {k} has no patches")
        chosen = rng.permutation(members)[: train_count(members.size, fraction)]
        train[chosen] = True
    return replace(patchset, train=train)


# --------------------------------------------------------------------------
# on-disk cache: NPY arrays plus a JSON sidecar


def save_reduced(directory, reduced: ReducedCube, provenance: dict) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_npy(d / "reduced.npy", reduced.data)
    write_npy(d / "loadings.npy", reduced.loadings)
    write_npy(d / "uniquenesses.npy", reduced.uniquenesses)
    write_npy(d / "band_means.npy", reduced.band_means)
    write_npy(d / "band_stds.npy", reduced.band_stds)
    meta = {
        **provenance,
        "bands": reduced.bands,
        "fa_iterations": reduced.iterations,
        "heywood_bands": reduced.heywood_bands,
    }
    (d / "reduced.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_reduced(directory) -> tuple[ReducedCube, dict]:
    d = Path(directory)
    meta = json.loads((d / "reduced.json").read_text())
    reduced = ReducedCube(
        data=read_npy(d / "reduced.npy"),
        loadings=read_npy(d / "loadings.npy"),
        uniquenesses=read_npy(d / "uniquenesses.npy"),
        band_means=read_npy(d / "band_means.npy"),
        band_stds=read_npy(d / "band_stds.npy"),
        iterations=meta["fa_iterations"],
        heywood_bands=meta["heywood_bands"],
    )
    return reduced, meta


def save_patch_index(directory, patchset: PatchSet, provenance: dict) -> None:
    """Persist coordinates and labels; windows are re-cut from the cached reduced cube."""
    d = Path(directory)
    write_npy(d / "patch_coords.npy", patchset.coords.astype(np.int32))
    write_npy(d / "patch_labels.npy", patchset.labels.astype(np.int32))
    meta = {**provenance, "patch_size": patchset.size, "class_count": patchset.class_count,
            "count": len(patchset)}
    (d / "patches.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_patch_index(directory, reduced: ReducedCube) -> tuple[PatchSet, dict]:
    d = Path(directory)
    meta = json.loads((d / "patches.json").read_text())
    coords = read_npy(d / "patch_coords.npy").astype(np.int64)
    labels = read_npy(d / "patch_labels.npy").astype(np.int64)
    ps = PatchSet(
        padded=pad_cube(reduced.data, meta["patch_size"]),
        coords=coords,
        labels=labels,
        size=meta["patch_size"],
        class_count=meta["class_count"],
    )
    return ps, meta
