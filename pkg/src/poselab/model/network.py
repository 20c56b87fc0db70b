"""Backbone, inception block, FC and twin-LSTM heads on the autodiff core.

Parameters live in a flat ``{name: Tensor}`` dict whose names follow
:func:`poselab.model.config.param_layout`. Every forward function accepts a
batch (leading axis N) and most also accept a single unbatched example.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from ..autodiff import (
    ShapeError, Tensor, add, bias_add, concat, conv2d, matmul, max_pool2d, mul,
    relu, reshape, sigmoid, slice_axis, take_rows, tanh,
)
from .config import BackboneConfig, HeadConfig, param_layout


def init_params(backbone: BackboneConfig, head: HeadConfig, seed: int = 0) -> dict:
    """Seeded uniform init.

    ReLU layers draw from [-k, k] with k = sqrt(6 / fan_in); LSTM and output
    layers use k = 1 / sqrt(fan_in). Biases start at zero except the LSTM
    forget gate, which starts at 1.
    """
    rng = np.random.default_rng([int(seed), 31337])
    params = {}
    for name, shape, kind in param_layout(backbone, head):
        if kind in ("zero", "forget"):
            arr = np.zeros(shape)
            if kind == "forget":
                u = shape[0] // 4
                arr[u:2 * u] = 1.0
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            k = math.sqrt(6.0 / fan_in) if kind == "he" else 1.0 / math.sqrt(fan_in)
            arr = rng.uniform(-k, k, size=shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return params


# ---------------------------------------------------------------- backbone

def _conv_relu(x: Tensor, params: dict, prefix: str, padding: int, stride: int = 1) -> Tensor:
    return relu(conv2d(x, params[prefix + ".w"], stride=stride, padding=padding, bias=params[prefix + ".b"]))


def inception_block_forward(x: Tensor, params: dict, prefix: str = "inc") -> Tensor:
    """Four parallel branches concatenated on channels; H and W are preserved."""
    if x.ndim not in (3, 4):
        raise ShapeError(f"inception block expects C x H x W input, got {x.shape}")
    h, w = x.shape[-2:]
    if h < 5 or w < 5:
        raise ShapeError(f"inception block needs at least 5x5 input, got {h}x{w}")
    b1 = _conv_relu(x, params, f"{prefix}.b1", 0)
    b3 = _conv_relu(_conv_relu(x, params, f"{prefix}.b3r", 0), params, f"{prefix}.b3", 1)
    b5 = _conv_relu(_conv_relu(x, params, f"{prefix}.b5r", 0), params, f"{prefix}.b5", 2)
    bp = _conv_relu(max_pool2d(x, 3, 1, padding=1), params, f"{prefix}.bp", 0)
    return concat([b1, b3, b5, bp], axis=x.ndim - 3)


def backbone_forward(x, params: dict, cfg: BackboneConfig) -> Tensor:
    """C x H x W -> (feature_dim,), or N x C x H x W -> N x feature_dim."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    want = (cfg.in_channels, cfg.input_size, cfg.input_size)
    if x.ndim not in (3, 4) or x.shape[-3:] != want:
        raise ShapeError(f"backbone expects {'x'.join(map(str, want))} input (optionally batched), got {x.shape}")
    h = x
    for i, (_, k, stride, pool) in enumerate(cfg.stages):
        h = _conv_relu(h, params, f"conv{i}", (k - 1) // 2, stride)
        if pool:
            h = max_pool2d(h, 2, 2)
    if cfg.inception:
        h = inception_block_forward(h, params)
    if x.ndim == 3:
        return reshape(h, (cfg.feature_dim,))
    return reshape(h, (x.shape[0], cfg.feature_dim))


# ---------------------------------------------------------------- heads

def _linear(x: Tensor, params: dict, prefix: str) -> Tensor:
    return bias_add(matmul(x, params[prefix + ".w"]), params[prefix + ".b"])


def _as_rows(f: Tensor):
    if f.ndim == 1:
        return reshape(f, (1, f.shape[0])), True
    if f.ndim == 2:
        return f, False
    raise ShapeError(f"expected a feature vector or N x F batch, got {f.shape}")


def _unrow(t: Tensor, squeeze: bool) -> Tensor:
    return reshape(t, (t.shape[1],)) if squeeze else t


def fc_head_forward(feature: Tensor, params: dict) -> tuple:
    """feature -> 2048-unit ReLU layer -> parallel 3- and 4-unit linear outputs.

    The orientation output is left unnormalized.
    """
    f, squeeze = _as_rows(feature)
    if f.shape[1] != params["fc.w"].shape[0]:
        raise ShapeError(f"FC head expects {params['fc.w'].shape[0]} features, got {f.shape[1]}")
    hidden = relu(_linear(f, params, "fc"))
    x = _linear(hidden, params, "out_x")
    q = _linear(hidden, params, "out_q")
    return _unrow(x, squeeze), _unrow(q, squeeze)


def lstm_cell_step(inp: Tensor, state: tuple, w: Tensor, b: Tensor) -> tuple:
    """One step; gates ordered (i, f, g, o) in the columns of ``w``."""
    h, c = state
    x, squeeze = _as_rows(inp)
    h2, _ = _as_rows(h)
    c2, _ = _as_rows(c)
    u = h2.shape[1]
    if w.shape != (x.shape[1] + u, 4 * u):
        raise ShapeError(f"LSTM weight {w.shape} does not fit input {x.shape[1]} and {u} units")
    z = bias_add(matmul(concat([x, h2], axis=1), w), b)
    i = sigmoid(slice_axis(z, 1, 0, u))
    f = sigmoid(slice_axis(z, 1, u, 2 * u))
    g = tanh(slice_axis(z, 1, 2 * u, 3 * u))
    o = sigmoid(slice_axis(z, 1, 3 * u, 4 * u))
    c_new = add(mul(f, c2), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return _unrow(h_new, squeeze), _unrow(c_new, squeeze)


def _run_lstm(features: Sequence[Tensor], params: dict, prefix: str, head: HeadConfig) -> Tensor:
    n = features[0].shape[0]
    seq = list(features)
    for layer in range(head.lstm_layers):
        w, b = params[f"{prefix}{layer}.w"], params[f"{prefix}{layer}.b"]
        h = c = Tensor(np.zeros((n, head.lstm_units)))
        outs = []
        for f in seq:
            h, c = lstm_cell_step(f, (h, c), w, b)
            outs.append(h)
        seq = outs
    return seq[-1]


def lstm_head_forward(features: Sequence[Tensor], length: int, params: dict, head: HeadConfig) -> tuple:
    """Features oldest to newest; predicts the pose of the newest frame.

    Each branch starts from a zero state. Its final hidden state feeds the
    3-unit (position) or 4-unit (orientation) linear layer.
    """
    if len(features) != length or length != head.sequence_length:
        raise ShapeError(f"LSTM head configured for {head.sequence_length} frames, got {len(features)}")
    rows = [_as_rows(f) for f in features]
    squeeze = rows[0][1]
    feats = [r[0] for r in rows]
    if head.shared_lstm:
        hx = hq = _run_lstm(feats, params, "lstm", head)
    else:
        hx = _run_lstm(feats, params, "lstm_x", head)
        hq = _run_lstm(feats, params, "lstm_q", head)
    x = _linear(hx, params, "out_x")
    q = _linear(hq, params, "out_q")
    return _unrow(x, squeeze), _unrow(q, squeeze)


# ---------------------------------------------------------------- model

class PoseModel:
    """Backbone plus head, with parameters owned in one dict."""

    def __init__(self, backbone: BackboneConfig, head: HeadConfig, seed: int = 0,
                 params: Optional[dict] = None):
        self.backbone = backbone
        self.head = head
        self.seed = seed
        self.params = params if params is not None else init_params(backbone, head, seed)

    @property
    def sequence_length(self) -> int:
        return self.head.sequence_length

    def parameters(self) -> list:
        return list(self.params.values())

    def features(self, images) -> Tensor:
        return backbone_forward(images, self.params, self.backbone)

    def forward(self, images, windows: Optional[np.ndarray] = None) -> tuple:
        """Predict (N x 3, N x 4) for a batch.

        ``images`` is M x C x H x W. For the FC head each image is one
        sample. For the LSTM head ``windows`` is an N x L index array into
        ``images``; every frame goes through the backbone once no matter how
        many windows share it.
        """
        feats = self.features(images)
        if feats.ndim == 1:
            raise ShapeError("forward expects a batch (M x C x H x W)")
        if self.head.kind == "fc":
            if windows is not None:
                feats = take_rows(feats, np.asarray(windows)[:, -1])
            return fc_head_forward(feats, self.params)
        if windows is None:
            if self.head.sequence_length != 1:
                raise ShapeError("LSTM head with L > 1 needs a window index array")
            windows = np.arange(feats.shape[0])[:, None]
        windows = np.asarray(windows)
        if windows.ndim != 2 or windows.shape[1] != self.head.sequence_length:
            raise ShapeError(f"windows must be N x {self.head.sequence_length}, got {windows.shape}")
        steps = [take_rows(feats, windows[:, t]) for t in range(windows.shape[1])]
        return lstm_head_forward(steps, self.head.sequence_length, self.params, self.head)


def feature_similarity(f1, f2) -> float:
    """Cosine similarity of two feature vectors."""
    a = np.ravel(f1.data if isinstance(f1, Tensor) else f1).astype(np.float64)
    b = np.ravel(f2.data if isinstance(f2, Tensor) else f2).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"feature lengths differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
