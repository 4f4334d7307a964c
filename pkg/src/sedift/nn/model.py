"""Encoder-decoder generator with bottleneck fusion, plus a patch discriminator.

The generator halves H and W after each encoder stage with max pooling and
mirrors the widths back up with 2x2 transposed convolutions; pre-pool
features of every encoder stage re-enter the decoder through dropout-gated
skip concatenations. The 72-value global vector joins at the bottleneck.

Parameters live in a flat name -> array dict so the optimizer, the L2
penalty, and the checkpoint format all share one view of the state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractViolation, require
from . import layers as L


def stage_widths(stage_count: int, base_width: int):
    """Per-stage conv widths: B,B | 2B,2B | 4B,4B,4B | 8B,8B,8B | 8B,8B,8B ...

    Width doubles per stage up to 8x the base; the first two stages hold two
    convolutions, deeper stages three. At base 64 and five stages this is the
    13-convolution layout of the classic VGG16 feature extractor.
    """
    require(stage_count >= 1 and base_width >= 1, "need positive stage count and width")
    out = []
    for s in range(stage_count):
        mult = min(2 ** s, 8)
        reps = 2 if s < 2 else 3
        out.append([base_width * mult] * reps)
    return out


def encoder_widths_flat(stage_count: int, base_width: int):
    return [w for stage in stage_widths(stage_count, base_width) for w in stage]


@dataclass(frozen=True)
class GeneratorConfig:
    height: int
    width: int
    in_channels: int = 1
    out_channels: int = 1
    stage_count: int = 5
    base_width: int = 8
    global_len: int = 72
    fusion_mode: str = "concat"
    dropout_body: float = 0.1
    dropout_skip: float = 0.5
    leak_slope: float = 0.2

    def __post_init__(self):
        factor = 1 << self.stage_count
        if self.height % factor or self.width % factor:
            raise ConfigError(
                f"input {self.height}x{self.width} not divisible by 2**{self.stage_count}")
        if not (self.dropout_skip > self.dropout_body):
            raise ConfigError("skip dropout must be strictly greater than body dropout")
        if self.fusion_mode not in ("concat", "learned"):
            raise ConfigError(f"unknown fusion mode {self.fusion_mode!r}")
        if self.global_len < 1:
            raise ConfigError("global vector length must be positive")

    @property
    def coding_shape(self):
        f = 1 << self.stage_count
        deep = stage_widths(self.stage_count, self.base_width)[-1][-1]
        return (self.height // f, self.width // f, deep)

    @property
    def fused_depth(self):
        deep = self.coding_shape[2]
        return deep + self.global_len if self.fusion_mode == "concat" else deep

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d: dict) -> "GeneratorConfig":
        return GeneratorConfig(**{k: d[k] for k in GeneratorConfig.__dataclass_fields__})


def shape_trace(config: GeneratorConfig):
    """Arithmetic walk of every named activation shape, without running data."""
    trace = []
    h, w = config.height, config.width
    stages = stage_widths(config.stage_count, config.base_width)
    c = config.in_channels
    for s, widths in enumerate(stages):
        for i, cout in enumerate(widths):
            trace.append((f"enc{s}c{i}", (h, w, cout)))
            c = cout
        h, w = h // 2, w // 2
        trace.append((f"pool{s}", (h, w, c)))
    trace.append(("coding", (h, w, c)))
    trace.append(("fused", (h, w, config.fused_depth)))
    c = config.fused_depth
    for s in reversed(range(config.stage_count)):
        widths = stages[s]
        h, w = h * 2, w * 2
        trace.append((f"dec{s}t", (h, w, widths[-1])))
        trace.append((f"dec{s}cat", (h, w, 2 * widths[-1])))
        c = 2 * widths[-1]
        for i, cout in enumerate(widths):
            trace.append((f"dec{s}c{i}", (h, w, cout)))
            c = cout
    trace.append(("out", (h, w, config.out_channels)))
    return trace


def _he_conv(rng, kh, kw, cin, cout):
    return rng.normal(0.0, np.sqrt(2.0 / (kh * kw * cin)), (kh, kw, cin, cout))


class GeneratorNet:
    """The appearance-translation network; owns a flat parameter dict."""

    def __init__(self, config: GeneratorConfig, seed: int = 0, params: dict = None):
        self.config = config
        self.stages = stage_widths(config.stage_count, config.base_width)
        if params is not None:
            self.params = params
            self._validate_params()
        else:
            self.params = self._init_params(np.random.default_rng(seed))

    def _param_shapes(self) -> dict:
        cfg = self.config
        shapes = {}
        cin = cfg.in_channels
        for s, widths in enumerate(self.stages):
            for i, cout in enumerate(widths):
                shapes[f"enc{s}c{i}_w"] = (3, 3, cin, cout)
                shapes[f"enc{s}c{i}_b"] = (cout,)
                cin = cout
        deep = self.stages[-1][-1]
        if cfg.fusion_mode == "learned":
            shapes["fuse_w"] = (deep + cfg.global_len, deep)
            shapes["fuse_b"] = (deep,)
        cin = cfg.fused_depth
        for s in reversed(range(cfg.stage_count)):
            widths = self.stages[s]
            shapes[f"dec{s}t_w"] = (2, 2, cin, widths[-1])
            shapes[f"dec{s}t_b"] = (widths[-1],)
            cin = 2 * widths[-1]
            for i, cout in enumerate(widths):
                shapes[f"dec{s}c{i}_w"] = (3, 3, cin, cout)
                shapes[f"dec{s}c{i}_b"] = (cout,)
                cin = cout
        shapes["out_w"] = (3, 3, cin, cfg.out_channels)
        shapes["out_b"] = (cfg.out_channels,)
        return shapes

    def _init_params(self, rng) -> dict:
        params = {}
        for name, shape in self._param_shapes().items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape)
            elif name == "out_w":
                # gentler scale in front of tanh
                params[name] = rng.normal(0.0, np.sqrt(1.0 / (shape[0] * shape[1] * shape[2])), shape)
            elif name == "fuse_w":
                params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), shape)
            elif name.endswith("t_w"):
                params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[2]), shape)
            else:
                params[name] = _he_conv(rng, *shape)
        return params

    def _validate_params(self):
        expected = self._param_shapes()
        got = {k: v.shape for k, v in self.params.items()}
        if got != expected:
            raise ContractViolation(f"parameter set does not match architecture: "
                                    f"{sorted(got)} vs {sorted(expected)}")
        self.params = {k: np.asarray(self.params[k], dtype=np.float64) for k in expected}

    def l2_param_names(self):
        """Parameters subject to the L2 penalty (weights, not biases)."""
        return [n for n in self.params if n.endswith("_w")]

    def import_encoder_weights(self, blobs: dict):
        """Load externally converted encoder conv weights by name, shape-checked."""
        for name, value in blobs.items():
            if name not in self.params or not name.startswith("enc"):
                raise ContractViolation(f"not an encoder parameter: {name!r}")
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self.params[name].shape:
                raise ContractViolation(
                    f"{name}: shape {value.shape} does not match {self.params[name].shape}")
            self.params[name] = value.copy()

    def forward(self, x, g, mode: str = "eval", rng=None):
        """Run the network; returns (prediction, tape) with tape for backward."""
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != (cfg.height, cfg.width, cfg.in_channels):
            raise ContractViolation(
                f"input shape {x.shape[1:]} does not match configured "
                f"{(cfg.height, cfg.width, cfg.in_channels)}")
        g = np.asarray(g, dtype=np.float64)
        if g.ndim == 1:
            g = g[None]
        if g.shape != (x.shape[0], cfg.global_len):
            raise ContractViolation(f"global vector shape {g.shape} does not match "
                                    f"({x.shape[0]}, {cfg.global_len})")
        if mode == "train":
            require(rng is not None, "train mode needs an rng for dropout")
        P = self.params
        slope = cfg.leak_slope
        tape = {"mode": mode, "enc": [], "pool": [], "dec": {}}

        h = x
        skips = []
        for s, widths in enumerate(self.stages):
            stage_tape = []
            for i in range(len(widths)):
                h, c_conv = L.conv_forward(h, P[f"enc{s}c{i}_w"], P[f"enc{s}c{i}_b"])
                h, c_act = L.leaky_relu_forward(h, slope)
                h, c_drop = L.dropout_forward(h, cfg.dropout_body, mode, rng)
                stage_tape.append((c_conv, c_act, c_drop))
            tape["enc"].append(stage_tape)
            skips.append(h)
            h, c_pool = L.maxpool2_forward(h)
            tape["pool"].append(c_pool)

        if cfg.fusion_mode == "concat":
            h, tape["fuse"] = L.fuse_concat_forward(h, g)
        else:
            h, tape["fuse"] = L.fuse_learned_forward(h, g, P["fuse_w"], P["fuse_b"], slope)

        for s in reversed(range(cfg.stage_count)):
            widths = self.stages[s]
            entry = {}
            h, entry["t"] = L.tconv2_forward(h, P[f"dec{s}t_w"], P[f"dec{s}t_b"])
            h, entry["t_act"] = L.leaky_relu_forward(h, slope)
            skip, entry["skip_drop"] = L.dropout_forward(skips[s], cfg.dropout_skip, mode, rng)
            h, entry["cat"] = L.concat_forward([h, skip])
            convs = []
            for i in range(len(widths)):
                h, c_conv = L.conv_forward(h, P[f"dec{s}c{i}_w"], P[f"dec{s}c{i}_b"])
                h, c_act = L.leaky_relu_forward(h, slope)
                h, c_drop = L.dropout_forward(h, cfg.dropout_body, mode, rng)
                convs.append((c_conv, c_act, c_drop))
            entry["convs"] = convs
            tape["dec"][s] = entry

        h, tape["out"] = L.conv_forward(h, P["out_w"], P["out_b"])
        y, tape["tanh"] = L.tanh_forward(h)
        return y, tape

    def backward(self, tape, dy):
        """Gradients of a scalar loss through the tape; returns (dx, grads, dg)."""
        cfg = self.config
        grads = {}
        dh = L.tanh_backward(np.asarray(dy, dtype=np.float64), tape["tanh"])
        dh, grads["out_w"], grads["out_b"] = L.conv_backward(dh, tape["out"])

        dskips = [None] * cfg.stage_count
        for s in range(cfg.stage_count):  # reverse of the decoder's S-1..0 order
            entry = tape["dec"][s]
            widths = self.stages[s]
            for i in reversed(range(len(widths))):
                c_conv, c_act, c_drop = entry["convs"][i]
                dh = L.dropout_backward(dh, c_drop)
                dh = L.leaky_relu_backward(dh, c_act)
                dh, grads[f"dec{s}c{i}_w"], grads[f"dec{s}c{i}_b"] = L.conv_backward(dh, c_conv)
            dh, dskip = L.concat_backward(dh, entry["cat"])
            dskips[s] = L.dropout_backward(dskip, entry["skip_drop"])
            dh = L.leaky_relu_backward(dh, entry["t_act"])
            dh, grads[f"dec{s}t_w"], grads[f"dec{s}t_b"] = L.tconv2_backward(dh, entry["t"])

        if cfg.fusion_mode == "concat":
            dh, dg = L.fuse_concat_backward(dh, tape["fuse"])
        else:
            dh, dg, grads["fuse_w"], grads["fuse_b"] = L.fuse_learned_backward(dh, tape["fuse"])

        for s in reversed(range(cfg.stage_count)):
            dh = L.maxpool2_backward(dh, tape["pool"][s])
            dh = dh + dskips[s]
            for i in reversed(range(len(self.stages[s]))):
                c_conv, c_act, c_drop = tape["enc"][s][i]
                dh = L.dropout_backward(dh, c_drop)
                dh = L.leaky_relu_backward(dh, c_act)
                dh, grads[f"enc{s}c{i}_w"], grads[f"enc{s}c{i}_b"] = L.conv_backward(dh, c_conv)
        return dh, grads, dg


class DiscriminatorNet:
    """Patch classifier over channel-concatenated (condition, image) pairs.

    Three stride-2 convolutions shrink H and W by 8, two stride-1
    convolutions deepen then flatten to one channel, and a logistic output
    yields a grid of per-patch real/fake probabilities.
    """

    def __init__(self, in_channels: int = 2, base_width: int = 8, seed: int = 0,
                 params: dict = None, leak_slope: float = 0.2):
        self.in_channels = in_channels
        self.base_width = base_width
        self.leak_slope = leak_slope
        b = base_width
        self.layout = [  # (name, cin, cout, stride)
            ("d0", in_channels, b, 2),
            ("d1", b, 2 * b, 2),
            ("d2", 2 * b, 4 * b, 2),
            ("d3", 4 * b, 8 * b, 1),
            ("d4", 8 * b, 1, 1),
        ]
        if params is not None:
            self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
            for name, cin, cout, _s in self.layout:
                require(self.params[f"{name}_w"].shape == (4, 4, cin, cout),
                        f"discriminator parameter {name} has wrong shape")
        else:
            rng = np.random.default_rng(seed)
            self.params = {}
            for name, cin, cout, _s in self.layout:
                self.params[f"{name}_w"] = _he_conv(rng, 4, 4, cin, cout)
                self.params[f"{name}_b"] = np.zeros(cout)

    def l2_param_names(self):
        return [n for n in self.params if n.endswith("_w")]

    def config_dict(self) -> dict:
        return {"in_channels": self.in_channels, "base_width": self.base_width,
                "leak_slope": self.leak_slope}

    def forward(self, x, y):
        """Probability grid that each patch of (x, y) is a real pair."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if y.ndim == 3:
            y = y[None]
        if x.shape[:3] != y.shape[:3]:
            raise ContractViolation(f"pair shapes differ: {x.shape} vs {y.shape}")
        h, c_cat = L.concat_forward([x, y])
        tape = {"cat": c_cat, "blocks": []}
        for k, (name, _cin, _cout, stride) in enumerate(self.layout):
            h, c_conv = L.conv_forward(h, self.params[f"{name}_w"],
                                       self.params[f"{name}_b"], stride=stride)
            if k < len(self.layout) - 1:
                h, c_act = L.leaky_relu_forward(h, self.leak_slope)
            else:
                h, c_act = L.sigmoid_forward(h)
            tape["blocks"].append((c_conv, c_act))
        return h, tape

    def backward(self, tape, dprob):
        """Returns (dx, dy, grads) for the two concatenated inputs."""
        grads = {}
        dh = np.asarray(dprob, dtype=np.float64)
        for k in reversed(range(len(self.layout))):
            name = self.layout[k][0]
            c_conv, c_act = tape["blocks"][k]
            if k < len(self.layout) - 1:
                dh = L.leaky_relu_backward(dh, c_act)
            else:
                dh = L.sigmoid_backward(dh, c_act)
            dh, grads[f"{name}_w"], grads[f"{name}_b"] = L.conv_backward(dh, c_conv)
        dx, dy = L.concat_backward(dh, tape["cat"])
        return dx, dy, grads
