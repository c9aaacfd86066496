"""Unnormalised 2D Haar analysis/synthesis and the multi-level pyramid.

The forward transform correlates each 2x2 block with four fixed +/-1 kernels
at stride 2, so ``LL`` is the plain block sum. The 1/4 normalisation lives in
the inverse. All functions act on the trailing two axes, so a single image
``[C,H,W]`` and a batch ``[N,C,H,W]`` are handled alike, channel by channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUBBANDS = ("LL", "LH", "HL", "HH")

HAAR_KERNELS: dict[str, np.ndarray] = {
    "LL": np.array([[1, 1], [1, 1]], dtype=np.int64),
    "LH": np.array([[-1, -1], [1, 1]], dtype=np.int64),
    "HL": np.array([[-1, 1], [-1, 1]], dtype=np.int64),
    "HH": np.array([[1, -1], [-1, 1]], dtype=np.int64),
}
for _k in HAAR_KERNELS.values():
    _k.setflags(write=False)


def kernel_matrix() -> np.ndarray:
    """The four kernels flattened as rows of a 4x4 integer matrix."""
    return np.stack([HAAR_KERNELS[name].reshape(-1) for name in SUBBANDS])


def _as_array(image) -> np.ndarray:
    data = getattr(image, "data", image)
    return np.asarray(data, dtype=np.float64)


def haar_forward(image) -> dict[str, np.ndarray]:
    x = _as_array(image)
    if x.ndim < 2:
        raise ValueError("haar_forward needs at least two (spatial) axes")
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"haar_forward needs even spatial extents, got {h}x{w}")
    if h == 0 or w == 0:
        raise ValueError("haar_forward: empty image")
    taps = [x[..., i::2, j::2] for i in range(2) for j in range(2)]
    bands = {}
    for name in SUBBANDS:
        k = HAAR_KERNELS[name].reshape(-1)
        # same accumulation order as conv2d: 0 + k00*a + k01*b + k10*c + k11*d
        acc = np.zeros(taps[0].shape)
        for coef, tap in zip(k, taps):
            acc += float(coef) * tap
        bands[name] = acc
    return bands


def haar_inverse(subbands: dict[str, np.ndarray]) -> np.ndarray:
    missing = [n for n in SUBBANDS if n not in subbands]
    if missing:
        raise ValueError(f"haar_inverse: missing subbands {missing}")
    arrs = {n: _as_array(subbands[n]) for n in SUBBANDS}
    shape = arrs["LL"].shape
    for n, a in arrs.items():
        if a.shape != shape:
            raise ValueError(f"haar_inverse: subband {n} has shape {a.shape}, LL has {shape}")
    out = np.empty(shape[:-2] + (2 * shape[-2], 2 * shape[-1]))
    for i in range(2):
        for j in range(2):
            acc = np.zeros(shape)
            for n in SUBBANDS:
                acc += float(HAAR_KERNELS[n][i, j]) * arrs[n]
            out[..., i::2, j::2] = acc / 4.0
    return out


@dataclass
class WaveletPyramid:
    """``levels[t]`` holds the subbands of decomposition level ``t+1``."""

    levels: list[dict[str, np.ndarray]]
    source_shape: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.levels)

    def stacked(self, level: int) -> np.ndarray:
        """Subbands of 1-based ``level`` concatenated on the channel axis (LL, LH, HL, HH)."""
        bands = self.levels[level - 1]
        return np.concatenate([bands[n] for n in SUBBANDS], axis=-3)

    def reconstruct(self) -> np.ndarray:
        ll = self.levels[-1]["LL"]
        for bands in reversed(self.levels):
            ll = haar_inverse({**bands, "LL": ll})
        return ll


def max_levels(h: int, w: int | None = None) -> int:
    """Largest T with both extents divisible by 2**T."""
    w = h if w is None else w
    t = 0
    while h > 0 and w > 0 and h % 2 == 0 and w % 2 == 0:
        h //= 2
        w //= 2
        t += 1
    return t


def haar_pyramid(image, levels: int) -> WaveletPyramid:
    x = _as_array(image)
    if levels < 1:
        raise ValueError("levels must be positive")
    h, w = x.shape[-2:]
    if h % (2**levels) or w % (2**levels):
        raise ValueError(
            f"{h}x{w} is not divisible by 2**{levels}; at most {max_levels(h, w)} levels possible"
        )
    out = []
    current = x
    for _ in range(levels):
        bands = haar_forward(current)
        out.append(bands)
        current = bands["LL"]
    return WaveletPyramid(out, tuple(x.shape))
