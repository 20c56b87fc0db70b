"""Pose losses, Adam, and the single training step."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tape, Tensor, add, backward, exp, l2norm, mul, reduce_mean, reshape, scale, sub

log = logging.getLogger(__name__)

DEFAULT_BETA = 500.0
S_X_INIT = 0.0
S_Q_INIT = -3.0


class NumericalError(FloatingPointError):
    pass


def _as_rows(t) -> Tensor:
    t = t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64))
    if t.ndim == 1:
        return reshape(t, (1, t.shape[0]))
    return t


def _check_finite(*ts) -> None:
    for t in ts:
        data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NumericalError("non-finite value in loss inputs")


def residual_norms(label, pred) -> Tensor:
    """Per-sample Euclidean distance (length-N tensor) of label and prediction rows."""
    a, b = _as_rows(label), _as_rows(pred)
    if a.shape != b.shape:
        raise ValueError(f"label {a.shape} and prediction {b.shape} differ in shape")
    return l2norm(sub(b, a), axis=1)


def fixed_beta_loss(x, x_pred, q, q_pred, beta: float = DEFAULT_BETA) -> Tensor:
    """Batch mean of ||x - x'|| + beta * ||q - q'||."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    _check_finite(x, x_pred, q, q_pred)
    per = add(residual_norms(x, x_pred), scale(residual_norms(q, q_pred), beta))
    return reduce_mean(per)


@dataclass
class AdaptiveLossState:
    """Learned log-variances for the position and orientation terms."""

    s_x: Tensor = field(default_factory=lambda: Tensor(np.array(S_X_INIT), requires_grad=True, name="s_x"))
    s_q: Tensor = field(default_factory=lambda: Tensor(np.array(S_Q_INIT), requires_grad=True, name="s_q"))

    @classmethod
    def create(cls, s_x: float = S_X_INIT, s_q: float = S_Q_INIT) -> "AdaptiveLossState":
        return cls(Tensor(np.array(float(s_x)), requires_grad=True, name="s_x"),
                   Tensor(np.array(float(s_q)), requires_grad=True, name="s_q"))

    def parameters(self) -> list:
        return [self.s_x, self.s_q]


def adaptive_loss(x, x_pred, q, q_pred, state: AdaptiveLossState) -> Tensor:
    """Batch mean of ||x - x'|| e^-s_x + s_x + ||q - q'|| e^-s_q + s_q."""
    _check_finite(x, x_pred, q, q_pred, state.s_x, state.s_q)
    lx = reduce_mean(residual_norms(x, x_pred))
    lq = reduce_mean(residual_norms(q, q_pred))
    pos = add(mul(lx, exp(scale(state.s_x, -1.0))), state.s_x)
    ori = add(mul(lq, exp(scale(state.s_q, -1.0))), state.s_q)
    return add(pos, ori)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    rejected: int = 0


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState) -> bool:
    """One bias-corrected Adam update in place.

    A missing gradient counts as zero. Any non-finite gradient rejects the
    whole step: nothing moves, ``t`` stays put, and the incident is logged.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    gs = []
    for p, g in zip(params, grads):
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.name or ''} {p.shape}")
        gs.append(g)
    for p, g in zip(params, gs):
        if not np.all(np.isfinite(g)):
            state.rejected += 1
            log.warning("adam step %d rejected: non-finite gradient for %s", state.t + 1, p.name or "parameter")
            return False
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    step = state.lr / c1
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        # m_hat / (sqrt(v_hat) + eps), built in one scratch buffer
        denom = v / c2 if v.ndim else np.array(v / c2)
        np.sqrt(denom, out=denom)
        denom += state.eps
        np.divide(m, denom, out=denom)
        denom *= step
        p.data = p.data - denom
    return True


# ---------------------------------------------------------------- training step

@dataclass
class Batch:
    images: np.ndarray                 # M x C x H x W network inputs
    x: np.ndarray                      # N x 3 position labels
    q: np.ndarray                      # N x 4 orientation labels
    windows: Optional[np.ndarray] = None   # N x L indices into images (LSTM)

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class StepMetrics:
    loss: float
    grad_norm: float
    s_x: float
    s_q: float
    accepted: bool


def compute_loss(model, batch: Batch, loss_kind: str, loss_state: Optional[AdaptiveLossState] = None,
                 beta: float = DEFAULT_BETA) -> Tensor:
    x_pred, q_pred = model.forward(batch.images, batch.windows)
    if loss_kind == "adaptive":
        return adaptive_loss(batch.x, x_pred, batch.q, q_pred, loss_state)
    if loss_kind == "fixed_beta":
        return fixed_beta_loss(batch.x, x_pred, batch.q, q_pred, beta)
    raise ValueError(f"unknown loss {loss_kind!r}")


def training_step(batch: Batch, model, loss_kind: str, optimizer: AdamState,
                  loss_state: Optional[AdaptiveLossState] = None, beta: float = DEFAULT_BETA) -> StepMetrics:
    """Mean loss over the batch, one backward pass, one Adam update."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    params = model.parameters()
    if loss_kind == "adaptive":
        if loss_state is None:
            raise ValueError("adaptive loss needs a loss_state")
        params = params + loss_state.parameters()
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = compute_loss(model, batch, loss_kind, loss_state, beta)
        backward(loss, tape)
    grads = [p.grad for p in params]
    sq = sum(float(np.sum(g * g)) for g in grads if g is not None)
    if math.isfinite(loss.item()):
        ok = adam_step(params, grads, optimizer)
    else:
        ok = False
        optimizer.rejected += 1
        log.warning("training step skipped: loss is %s", loss.item())
    sx = loss_state.s_x.item() if loss_state is not None else float("nan")
    sqv = loss_state.s_q.item() if loss_state is not None else float("nan")
    return StepMetrics(loss.item(), math.sqrt(sq), sx, sqv, bool(ok))


# ---------------------------------------------------------------- CSV log

LOG_COLUMNS = ("step", "epoch", "loss", "s_x", "s_q", "grad_norm")


class MetricsLog:
    """Append-only CSV of per-step metrics."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh)
        self._w.writerow(LOG_COLUMNS)
        self.rows = 0

    def append(self, step: int, epoch: int, m: StepMetrics) -> None:
        self._w.writerow([step, epoch, repr(m.loss), repr(m.s_x), repr(m.s_q), repr(m.grad_norm)])
        self._fh.flush()
        self.rows += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
