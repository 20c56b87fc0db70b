"""Network configurations and the parameter layout they imply."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Tuple

Stage = Tuple[int, int, int, bool]   # (out_channels, kernel, stride, 2x2 max-pool after)

DEFAULT_STAGES = ((16, 3, 1, True), (32, 3, 1, True), (64, 3, 1, True), (64, 3, 1, True))
# Strided stem plus two narrow stages: about 30x cheaper per frame than the default
# at 224 px, which is what lets the synthetic experiments train on one CPU core.
FAST_STAGES = ((8, 4, 4, True), (16, 3, 1, True), (32, 3, 1, True))


@dataclass(frozen=True)
class InceptionConfig:
    """Branch widths: 1x1; 1x1 -> 3x3; 1x1 -> 5x5; 3x3 max-pool -> 1x1."""

    c1: int = 8
    r3: int = 8
    c3: int = 8
    r5: int = 4
    c5: int = 8
    cp: int = 8

    @property
    def out_channels(self) -> int:
        return self.c1 + self.c3 + self.c5 + self.cp


@dataclass(frozen=True)
class BackboneConfig:
    stages: tuple = DEFAULT_STAGES
    inception: bool = False
    inception_widths: InceptionConfig = field(default_factory=InceptionConfig)
    input_size: int = 224
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(tuple(s) for s in self.stages))
        if not self.stages and not self.inception:
            raise ValueError("backbone needs at least one stage")
        for ch, k, stride, _ in self.stages:
            if ch < 1 or k < 1 or stride < 1:
                raise ValueError(f"bad stage ({ch}, {k}, {stride})")
        if self.feature_dim < 1:
            raise ValueError("configuration collapses the input to nothing")

    def stage_sizes(self) -> list:
        """Spatial size after each stage (and the inception block, if any)."""
        s = self.input_size
        out = []
        for _, k, stride, pool in self.stages:
            pad = (k - 1) // 2
            s = (s + 2 * pad - k) // stride + 1
            if pool:
                s //= 2
            out.append(s)
        return out

    @property
    def out_channels(self) -> int:
        if self.inception:
            return self.inception_widths.out_channels
        return self.stages[-1][0] if self.stages else self.in_channels

    @property
    def feature_dim(self) -> int:
        sizes = self.stage_sizes()
        s = sizes[-1] if sizes else self.input_size
        return self.out_channels * s * s

    @classmethod
    def fast(cls, **kw) -> "BackboneConfig":
        return cls(stages=FAST_STAGES, **kw)


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "fc"                 # "fc" or "lstm"
    fc_hidden: int = 2048
    lstm_units: int = 64
    sequence_length: int = 1
    lstm_layers: int = 1             # stacked cells per branch
    shared_lstm: bool = False        # one LSTM feeding both output layers

    def __post_init__(self):
        if self.kind not in ("fc", "lstm"):
            raise ValueError(f"head kind must be 'fc' or 'lstm', got {self.kind!r}")
        if self.sequence_length < 1:
            raise ValueError("sequence_length must be positive")
        if self.kind == "fc" and self.sequence_length != 1:
            raise ValueError("the FC head takes single frames (sequence_length = 1)")
        if self.fc_hidden < 1 or self.lstm_units < 1 or self.lstm_layers < 1:
            raise ValueError("layer sizes must be positive")


def config_to_dict(backbone: BackboneConfig, head: HeadConfig) -> dict:
    return {"backbone": asdict(backbone), "head": asdict(head)}


def config_from_dict(d: dict) -> tuple:
    b = dict(d["backbone"])
    b["stages"] = tuple(tuple(s) for s in b["stages"])
    b["inception_widths"] = InceptionConfig(**b["inception_widths"])
    return BackboneConfig(**b), HeadConfig(**d["head"])


# ---------------------------------------------------------------- layout

def param_layout(backbone: BackboneConfig, head: HeadConfig) -> list:
    """Ordered (name, shape, init) triples; init is 'he', 'lecun', 'zero' or 'forget'."""
    out = []
    c = backbone.in_channels
    for i, (ch, k, _, _) in enumerate(backbone.stages):
        out.append((f"conv{i}.w", (ch, c, k, k), "he"))
        out.append((f"conv{i}.b", (ch,), "zero"))
        c = ch
    if backbone.inception:
        w = backbone.inception_widths
        for name, cin, cout, k in (("b1", c, w.c1, 1), ("b3r", c, w.r3, 1), ("b3", w.r3, w.c3, 3),
                                   ("b5r", c, w.r5, 1), ("b5", w.r5, w.c5, 5), ("bp", c, w.cp, 1)):
            out.append((f"inc.{name}.w", (cout, cin, k, k), "he"))
            out.append((f"inc.{name}.b", (cout,), "zero"))
    F = backbone.feature_dim
    if head.kind == "fc":
        H = head.fc_hidden
        out += [("fc.w", (F, H), "he"), ("fc.b", (H,), "zero")]
        src = H
        prefixes = ("x", "q")
    else:
        U = head.lstm_units
        branches = ("lstm",) if head.shared_lstm else ("lstm_x", "lstm_q")
        for br in branches:
            fan = F
            for layer in range(head.lstm_layers):
                out.append((f"{br}{layer}.w", (fan + U, 4 * U), "lecun"))
                out.append((f"{br}{layer}.b", (4 * U,), "forget"))
                fan = U
        src = U
        prefixes = ("x", "q")
    for p, n in zip(prefixes, (3, 4)):
        out.append((f"out_{p}.w", (src, n), "lecun"))
        out.append((f"out_{p}.b", (n,), "zero"))
    return out


def parameter_count(backbone: BackboneConfig, head: HeadConfig) -> int:
    total = 0
    for _, shape, _ in param_layout(backbone, head):
        n = 1
        for s in shape:
            n *= s
        total += n
    return total
