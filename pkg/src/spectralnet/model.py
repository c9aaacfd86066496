"""Staged 2D CNN with Haar-pyramid subbands fused in at each downsampling stage.

Layout for stage ``t`` with input ``x`` (``c_in`` channels, side ``s``)::

    main  = relu(bn(conv3x3 stride 2 (x)))                 c_t channels, side s/2
    wave  = relu(bn(conv3x3 (subbands of level t)))        c_t channels, side s/2
    fused = concat(main, wave) | main + wave | main        per fusion_mode
    out   = fused + conv1x1 stride 2 (x)                   projection shortcut

Stages beyond ``wavelet_levels`` skip the wavelet branch. The head is
global average pool -> dropout -> affine -> relu -> dropout -> affine.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ndtensor as nd
from .haar import WaveletPyramid, haar_pyramid, max_levels
from .ndtensor import RunningStats, Tensor

FUSION_MODES = ("concat", "add", "none")


def _default_levels(patch_size: int, stages: int) -> int:
    return min(4, max_levels(patch_size), stages)


@dataclass
class ModelConfig:
    patch_size: int
    input_bands: int
    class_count: int
    stage_channels: tuple[int, ...] = (64, 128, 256, 256)
    wavelet_levels: int | None = None
    dense_width: int = 128
    dropout_rates: tuple[float, float] = (0.4, 0.4)
    fusion_mode: str = "concat"

    def __post_init__(self) -> None:
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.dropout_rates = tuple(float(r) for r in self.dropout_rates)
        if self.wavelet_levels is None:
            self.wavelet_levels = _default_levels(self.patch_size, len(self.stage_channels))
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        if not self.stage_channels or min(self.stage_channels) < 1:
            raise ValueError("stage_channels must be a nonempty list of positive widths")
        if min(self.patch_size, self.input_bands, self.dense_width) < 1 or self.class_count < 1:
            raise ValueError("patch_size, input_bands, dense_width and class_count must be positive")
        if len(self.dropout_rates) != 2 or not all(0.0 <= r < 1.0 for r in self.dropout_rates):
            raise ValueError("dropout_rates must be two rates in [0, 1)")
        if not 0 <= self.wavelet_levels <= len(self.stage_channels):
            raise ValueError(
                f"wavelet_levels={self.wavelet_levels} exceeds the {len(self.stage_channels)} stride-2 stages"
            )
        if self.wavelet_levels and self.patch_size % (2**self.wavelet_levels):
            raise ValueError(
                f"patch size {self.patch_size} is not divisible by 2**{self.wavelet_levels}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["dropout_rates"] = list(self.dropout_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "stage_channels": tuple(d["stage_channels"]),
                      "dropout_rates": tuple(d["dropout_rates"])})


@dataclass
class LayerSpec:
    name: str
    kind: str
    in_channels: int
    out_channels: int
    spatial: int  # output side length


@dataclass
class SpectralNet:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    running: dict[str, RunningStats] = field(default_factory=dict)
    layers: list[LayerSpec] = field(default_factory=list)
    training: bool = True

    # ---- construction helpers
    def _param(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name} registered twice")
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _conv(self, rng, name, cin, cout, k, spatial, bias=False):
        std = np.sqrt(2.0 / (cin * k * k))
        self._param(f"{name}.weight", rng.normal(0.0, std, size=(cout, cin, k, k)))
        if bias:
            self._param(f"{name}.bias", np.zeros(cout))
        self.layers.append(LayerSpec(name, f"conv{k}x{k}", cin, cout, spatial))

    def _bn(self, name, channels, spatial):
        self._param(f"{name}.gamma", np.ones(channels))
        self._param(f"{name}.beta", np.zeros(channels))
        self.running[name] = RunningStats()
        self.layers.append(LayerSpec(name, "batch_norm", channels, channels, spatial))

    def _affine(self, rng, name, din, dout):
        self._param(f"{name}.weight", rng.normal(0.0, np.sqrt(2.0 / din), size=(din, dout)))
        self._param(f"{name}.bias", np.zeros(dout))
        self.layers.append(LayerSpec(name, "affine", din, dout, 1))

    # ---- mode
    def train(self) -> "SpectralNet":
        self.training = True
        return self

    def eval(self) -> "SpectralNet":
        self.training = False
        return self

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def stage_sizes(self) -> list[int]:
        return [l.spatial for l in self.layers if l.kind == "fusion"]

    # ---- forward
    def _conv_bn_relu(self, x, name, stride=1, padding=1):
        y = nd.conv2d(x, self.params[f"{name}.conv.weight"], None, stride=stride, padding=padding)
        y = nd.batch_norm(
            y, self.params[f"{name}.bn.gamma"], self.params[f"{name}.bn.beta"],
            self.running[f"{name}.bn"], self.training,
        )
        return nd.relu(y)

    def pyramid_inputs(self, batch: np.ndarray, pyramids=None) -> list[np.ndarray]:
        """Per-level stacked subbands ``[N, 4B, S/2^t, S/2^t]`` for ``t = 1..levels``."""
        levels = self.config.wavelet_levels
        if levels == 0:
            return []
        if pyramids is None:
            pyr = haar_pyramid(batch, levels)
            return [pyr.stacked(t) for t in range(1, levels + 1)]
        if isinstance(pyramids, WaveletPyramid):
            pyramids = [pyramids]
        if len(pyramids) != batch.shape[0]:
            raise ValueError("need one pyramid per sample")
        out = []
        for t in range(1, levels + 1):
            if any(len(p) < t for p in pyramids):
                raise ValueError(f"pyramid depth below configured {levels} levels")
            out.append(np.stack([p.stacked(t) for p in pyramids]))
        return out

    def forward(self, batch, pyramids=None, rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.config
        x_arr = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
        if x_arr.ndim != 4 or x_arr.shape[1:] != (cfg.input_bands, cfg.patch_size, cfg.patch_size):
            raise ValueError(
                f"expected batch [N, {cfg.input_bands}, {cfg.patch_size}, {cfg.patch_size}], got {x_arr.shape}"
            )
        bands = self.pyramid_inputs(x_arr, pyramids)
        x = batch if isinstance(batch, Tensor) else Tensor(x_arr)
        h = self._conv_bn_relu(x, "stem")
        for t in range(1, len(cfg.stage_channels) + 1):
            name = f"stage{t}"
            main = self._conv_bn_relu(h, f"{name}.main", stride=2)
            if t <= cfg.wavelet_levels and cfg.fusion_mode != "none":
                sub = bands[t - 1]
                if sub.shape[2:] != main.shape[2:]:
                    raise ValueError(
                        f"{name}: wavelet level {t} is {sub.shape[2:]} but feature map is {main.shape[2:]}"
                    )
                wave = self._conv_bn_relu(Tensor(sub), f"{name}.wave")
                fused = nd.concat_channels([main, wave]) if cfg.fusion_mode == "concat" else nd.add(main, wave)
            else:
                fused = main
            shortcut = nd.conv2d(
                h, self.params[f"{name}.proj.weight"], self.params[f"{name}.proj.bias"], stride=2
            )
            h = nd.add(fused, shortcut)
        z = nd.global_avg_pool(h)
        z = nd.dropout(z, cfg.dropout_rates[0], self.training, rng)
        z = nd.relu(nd.affine(z, self.params["dense.weight"], self.params["dense.bias"]))
        z = nd.dropout(z, cfg.dropout_rates[1], self.training, rng)
        return nd.affine(z, self.params["head.weight"], self.params["head.bias"])

    __call__ = forward


def build_model(config: ModelConfig, rng: np.random.Generator | int = 0) -> SpectralNet:
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    net = SpectralNet(config)
    s = config.patch_size
    b = config.input_bands
    c0 = config.stage_channels[0]
    net._conv(rng, "stem.conv", b, c0, 3, s)
    net._bn("stem.bn", c0, s)
    cin = c0
    for t, ct in enumerate(config.stage_channels, start=1):
        name = f"stage{t}"
        s_out = (s + 2 - 3) // 2 + 1
        net._conv(rng, f"{name}.main.conv", cin, ct, 3, s_out)
        net._bn(f"{name}.main.bn", ct, s_out)
        fused = ct
        if t <= config.wavelet_levels and config.fusion_mode != "none":
            wave_side = config.patch_size // 2**t
            if wave_side != s_out:
                raise ValueError(f"{name}: wavelet level {t} side {wave_side} != feature map side {s_out}")
            net._conv(rng, f"{name}.wave.conv", 4 * b, ct, 3, s_out)
            net._bn(f"{name}.wave.bn", ct, s_out)
            if config.fusion_mode == "concat":
                fused = 2 * ct
        net.layers.append(LayerSpec(f"{name}.fusion", "fusion", cin, fused, s_out))
        net._conv(rng, f"{name}.proj", cin, fused, 1, s_out, bias=True)
        cin, s = fused, s_out
    net._affine(rng, "dense", cin, config.dense_width)
    net._affine(rng, "head", config.dense_width, config.class_count)
    return net


def count_parameters(net) -> int:
    params = net.params.values() if hasattr(net, "params") else net
    return int(sum(p.data.size for p in params))
