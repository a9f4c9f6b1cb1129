"""Toy encoder-decoder depth networks with interchangeable heads.

The backbone (two stride-2 convs, two upsample+conv stages) supplies global
context; the head refines at full resolution with three 3x3 layers of
decreasing width and a final 1x1 conv. Heads:

``sc``       standard convolutions
``sc_mask``  standard convolutions, segment ids appended as an input channel
``ic``       instance convolutions driven by the full-resolution segment map
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tape, Var, concat, relu, softplus
from ..conv import InstanceMask, conv2d, instance_conv2d_op, instance_mask, upsample_op

HEADS = ("sc", "sc_mask", "ic")


@dataclass(frozen=True)
class NetConfig:
    head: str = "ic"
    enc_channels: tuple[int, int] = (16, 32)
    dec_channels: tuple[int, int] = (16, 16)
    head_channels: tuple[int, int, int] = (16, 12, 8)
    k: int = 64
    sigma: float = 1.0
    compactness: float = 10.0
    iterations: int = 10
    lr: float = 1e-3
    steps: int = 3000
    warmup_steps: int = 300  # linear lr ramp; Adam's first sign-like steps kill narrow layers
    seed: int = 0
    init_depth: float = 3.0
    hidden_bias: float = 0.1

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if len(self.enc_channels) != 2 or len(self.dec_channels) != 2:
            raise ValueError("encoder and decoder take exactly two stages each")
        if len(self.head_channels) != 3:
            raise ValueError("the head has exactly three 3x3 layers")
        if any(c < 1 for c in (*self.enc_channels, *self.dec_channels, *self.head_channels)):
            raise ValueError("channel counts must be positive")
        if list(self.head_channels) != sorted(self.head_channels, reverse=True):
            raise ValueError("head channels must not increase")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")


def _layer_specs(cfg: NetConfig) -> list[tuple[str, int, int, int]]:
    """(name, in, out, kernel) for every conv layer, in forward order."""
    e1, e2 = cfg.enc_channels
    d1, d2 = cfg.dec_channels
    h1, h2, h3 = cfg.head_channels
    head_in = d2 + (1 if cfg.head == "sc_mask" else 0)
    return [
        ("enc1", 3, e1, 3), ("enc2", e1, e2, 3),
        ("dec1", e2, d1, 3), ("dec2", d1, d2, 3),
        ("head1", head_in, h1, 3), ("head2", h1, h2, 3), ("head3", h2, h3, 3),
        ("out", h3, 1, 1),
    ]


def init_params(cfg: NetConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, cin, cout, k in _layer_specs(cfg):
        bound = math.sqrt(6.0 / (cin * k * k))
        params[f"{name}.w"] = rng.uniform(-bound, bound, size=(cout, cin, k, k))
        # a small positive bias keeps narrow ReLU layers from dying early
        params[f"{name}.b"] = np.full(cout, cfg.hidden_bias)
    # start the softplus output near a typical scene depth
    params["out.b"][:] = math.log(math.expm1(cfg.init_depth))
    return params


@dataclass
class DepthNet:
    cfg: NetConfig
    params: dict[str, np.ndarray]
    segments: np.ndarray | None = None
    _mask: InstanceMask | None = field(default=None, repr=False)

    def set_segments(self, segments: np.ndarray) -> None:
        self.segments = np.asarray(segments)
        self._mask = None
        if self.cfg.head == "ic":
            # all head layers are 3x3 / stride 1 / same: one indicator set serves them all
            self._mask = instance_mask(self.segments, 3, 3, 1, "same")

    def _segment_channel(self) -> np.ndarray:
        s = self.segments.astype(np.float64)
        lo, hi = s.min(), s.max()
        return ((s - lo) / (hi - lo) if hi > lo else np.zeros_like(s))[None]

    def backbone(self, tape: Tape, p: dict[str, Var], x: Var) -> Var:
        h = relu(conv2d(x, p["enc1.w"], p["enc1.b"], stride=2))
        h = relu(conv2d(h, p["enc2.w"], p["enc2.b"], stride=2))
        h = relu(conv2d(upsample_op(h), p["dec1.w"], p["dec1.b"]))
        return relu(conv2d(upsample_op(h), p["dec2.w"], p["dec2.b"]))

    def head(self, tape: Tape, p: dict[str, Var], feats: Var) -> Var:
        if self.cfg.head != "sc" and self.segments is None:
            raise ValueError(f"head {self.cfg.head!r} needs a segment map")
        h = feats
        if self.cfg.head == "sc_mask":
            h = concat([h, tape.leaf(self._segment_channel())])
        for name in ("head1", "head2", "head3"):
            if self.cfg.head == "ic":
                h = relu(instance_conv2d_op(h, self.segments, p[f"{name}.w"],
                                            p[f"{name}.b"], mask=self._mask))
            else:
                h = relu(conv2d(h, p[f"{name}.w"], p[f"{name}.b"]))
        return softplus(conv2d(h, p["out.w"], p["out.b"], padding=0))

    def forward(self, tape: Tape, rgb: np.ndarray, params: dict[str, Var] | None = None
                ) -> tuple[Var, dict[str, Var]]:
        """Depth prediction (1, H, W) for an (H, W, 3) image; returns it with the leaf vars."""
        h, w = rgb.shape[:2]
        if h % 4 or w % 4:
            raise ValueError("image sides must be multiples of 4")
        if params is None:
            params = {k: tape.leaf(v) for k, v in self.params.items()}
        x = tape.leaf(np.ascontiguousarray(np.transpose(rgb, (2, 0, 1))))
        return self.head(tape, params, self.backbone(tape, params, x)), params

    def predict(self, rgb: np.ndarray) -> np.ndarray:
        out, _ = self.forward(Tape(), rgb)
        return out.value[0]


def build_net(cfg: NetConfig, segments: np.ndarray | None = None) -> DepthNet:
    net = DepthNet(cfg, init_params(cfg))
    if segments is not None:
        net.set_segments(segments)
    return net
