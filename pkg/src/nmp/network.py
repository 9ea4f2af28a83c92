"""Backbone, perception header and cost-volume header built on the autodiff ops."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .anchors import N_REG
from .autodiff import CheckpointError, ParamStore, Tensor

COST_CLIP = 1000.0


@dataclass
class BackboneConfig:
    block_layer_counts: tuple = (1, 1, 2, 2, 2)
    block_filters: tuple = (16, 16, 32, 32, 64)
    pool_after: tuple = (True, True, True, False)
    downsample_rate: int = 4

    def __post_init__(self):
        self.block_layer_counts = tuple(int(v) for v in self.block_layer_counts)
        self.block_filters = tuple(int(v) for v in self.block_filters)
        self.pool_after = tuple(bool(v) for v in self.pool_after)
        if len(self.block_layer_counts) != 5 or len(self.block_filters) != 5:
            raise ValueError("backbone needs exactly five blocks")
        if len(self.pool_after) != 4:
            raise ValueError("pool_after covers the first four blocks")
        if self.downsample_rate not in (1, 2, 4, 8):
            raise ValueError("downsample_rate must be a power of two up to 8")

    @property
    def input_divisor(self) -> int:
        return max(self.downsample_rate, 2 ** sum(self.pool_after))

    @classmethod
    def desk(cls) -> "BackboneConfig":
        return cls()

    @classmethod
    def full(cls) -> "BackboneConfig":
        return cls((2, 2, 3, 6, 5), (32, 64, 128, 256, 256))

    @classmethod
    def tiny(cls) -> "BackboneConfig":
        """Small enough for finite-difference checks of the whole model."""
        return cls((1, 1, 1, 1, 1), (2, 2, 2, 2, 3))


@dataclass
class ModelConfig:
    in_channels: int
    T: int = 6
    anchors_per_cell: int = 12
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    cost_filters: tuple = (32, 32, 16)
    perception: bool = True
    clip: float = COST_CLIP

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        self.cost_filters = tuple(int(v) for v in self.cost_filters)
        if len(self.cost_filters) != 3:
            raise ValueError("cost_filters lists (conv, deconv1, deconv2) widths")

    @property
    def reg_steps(self) -> int:
        """Regression covers the current frame plus T future frames."""
        return self.T + 1

    @property
    def reg_channels(self) -> int:
        return self.anchors_per_cell * N_REG * self.reg_steps


@dataclass
class ModelOutput:
    features: Tensor
    cls_logits: Optional[Tensor]  # (1, K, H/4, W/4)
    regression: Optional[Tensor]  # (1, K * 6 * (T+1), H/4, W/4)
    cost: Tensor  # (1, T, H, W)

    def scores(self) -> np.ndarray:
        """(H/4, W/4, K) probabilities."""
        z = self.cls_logits.data[0].transpose(1, 2, 0).astype(float)
        return 1.0 / (1.0 + np.exp(-z))

    def regression_grid(self, k: int) -> np.ndarray:
        """(H/4, W/4, K, T+1, 6) regression outputs."""
        r = self.regression.data[0]
        h, w = r.shape[1:]
        return r.reshape(k, -1, N_REG, h, w).transpose(3, 4, 0, 1, 2).astype(float)


def _he_uniform(rng, shape, fan_in) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class NMPModel:
    """Parameters plus the forward pass. Gradients flow through the graph
    returned by :meth:`forward`."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.params = ParamStore(dtype)
        rng = np.random.default_rng(seed)
        bb = cfg.backbone
        c_in = cfg.in_channels
        for b, (n, f) in enumerate(zip(bb.block_layer_counts, bb.block_filters)):
            if b == 4:
                c_in = sum(bb.block_filters[:4])
            for j in range(n):
                self._conv(rng, f"backbone.b{b + 1}.c{j + 1}", c_in, f)
                c_in = f
        feat = bb.block_filters[4]
        k = cfg.anchors_per_cell
        self._conv(rng, "perception.cls", feat, k)
        self._conv(rng, "perception.reg", feat, cfg.reg_channels)
        c0, c1, c2 = cfg.cost_filters
        self._conv(rng, "cost.conv", feat, c0)
        ups = int(round(math.log2(bb.downsample_rate)))
        widths = [c0, c1, c2][: ups + 1] if ups <= 2 else [c0] + [c1] * (ups - 1) + [c2]
        self._n_up = ups
        for u in range(ups):
            cin, cout = widths[u], widths[u + 1]
            self.params.add(f"cost.deconv{u + 1}.w", _he_uniform(rng, (cin, cout, 3, 3), cin * 9 / 4))
            self.params.add(f"cost.deconv{u + 1}.b", np.zeros(cout))
        self._conv(rng, "cost.out", widths[ups], cfg.T)

    def _conv(self, rng, name, cin, cout, k=3):
        self.params.add(f"{name}.w", _he_uniform(rng, (cout, cin, k, k), cin * k * k))
        self.params.add(f"{name}.b", np.zeros(cout))

    def _p(self, name) -> Tensor:
        return self.params[name]

    def _apply_conv(self, x, name, relu=True):
        y = ad.conv2d(x, self._p(f"{name}.w"), self._p(f"{name}.b"), stride=1, padding=1)
        return ad.relu(y) if relu else y

    def backbone(self, x: Tensor) -> Tensor:
        bb = self.cfg.backbone
        _, _, h, w = x.shape
        div = bb.input_divisor
        if h % div or w % div:
            raise ValueError(f"input {h}x{w} must be divisible by {div}")
        oh, ow = h // bb.downsample_rate, w // bb.downsample_rate
        feats = []
        for b in range(4):
            for j in range(bb.block_layer_counts[b]):
                x = self._apply_conv(x, f"backbone.b{b + 1}.c{j + 1}")
            if bb.pool_after[b]:
                x = ad.maxpool2d(x, 2)
            feats.append(ad.bilinear_resize(x, oh, ow))
        x = ad.concat_channels(feats)
        for j in range(bb.block_layer_counts[4]):
            x = self._apply_conv(x, f"backbone.b5.c{j + 1}")
        return x

    def perception(self, features: Tensor):
        cls = self._apply_conv(features, "perception.cls", relu=False)
        reg = self._apply_conv(features, "perception.reg", relu=False)
        return cls, reg

    def cost_head(self, features: Tensor) -> Tensor:
        x = self._apply_conv(features, "cost.conv")
        for u in range(self._n_up):
            x = ad.deconv2d(
                x, self._p(f"cost.deconv{u + 1}.w"), self._p(f"cost.deconv{u + 1}.b"),
                stride=2, padding=1, output_padding=1,
            )
            x = ad.relu(x)
        x = self._apply_conv(x, "cost.out", relu=False)
        return ad.clip(x, -self.cfg.clip, self.cfg.clip)

    def forward(self, x, with_perception: Optional[bool] = None) -> ModelOutput:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.params.dtype))
        if x.data.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected (N, {self.cfg.in_channels}, H, W) input, got {x.shape}")
        feats = self.backbone(x)
        use_p = self.cfg.perception if with_perception is None else with_perception
        cls, reg = self.perception(feats) if use_p else (None, None)
        return ModelOutput(feats, cls, reg, self.cost_head(feats))

    def load_params(self, store: ParamStore) -> None:
        """Copy checkpoint values in; names and shapes must match exactly."""
        mine, theirs = set(self.params), set(store)
        if mine != theirs:
            missing, extra = sorted(mine - theirs)[:3], sorted(theirs - mine)[:3]
            raise CheckpointError(f"checkpoint does not fit this model (missing {missing}, unexpected {extra})")
        for name, p in self.params.items():
            value = store[name].data
            if value.shape != p.data.shape:
                raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {p.data.shape}")
            p.data[...] = value
