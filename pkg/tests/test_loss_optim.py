import csv
import logging

import numpy as np
import pytest

from poselab.autodiff import Tape, Tensor, backward, grad_check
from poselab.loss_optim import (
    DEFAULT_BETA, LOG_COLUMNS, S_Q_INIT, S_X_INIT, AdamState, AdaptiveLossState, Batch, MetricsLog,
    NumericalError, StepMetrics, adam_step, adaptive_loss, compute_loss, fixed_beta_loss,
    residual_norms, training_step,
)
from poselab.model import BackboneConfig, HeadConfig, PoseModel

TINY = BackboneConfig(stages=((4, 3, 1, True), (4, 3, 1, False)), input_size=8)


def _stable_norm(d):
    return np.linalg.norm(d, axis=-1)


def _unit(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


# ---------------------------------------------------------------- fixed beta

def test_fixed_beta_position_only():
    loss = fixed_beta_loss([0.0, 0, 0], [3.0, 4, 0], [1.0, 0, 0, 0], [1.0, 0, 0, 0], beta=500)
    # the exact orientation term still contributes beta * 1e-10 from the stabilized norm
    assert loss.item() == pytest.approx(5.0, abs=1e-6)


def test_fixed_beta_combines_terms():
    loss = fixed_beta_loss([0.0, 0, 0], [2.0, 0, 0], [1.0, 0, 0, 0], [1.0, 0.1, 0, 0], beta=1.0)
    assert loss.item() == pytest.approx(2.1, abs=1e-9)


def test_perfect_prediction_is_zero():
    rng = np.random.default_rng(0)
    x, q = rng.standard_normal((5, 3)), _unit(rng, 5)
    assert abs(fixed_beta_loss(x, x.copy(), q, q.copy()).item()) < 1e-6
    st = AdaptiveLossState.create(0.0, 0.0)
    assert abs(adaptive_loss(x, x.copy(), q, q.copy(), st).item()) < 1e-6


def test_fixed_beta_is_batch_mean():
    rng = np.random.default_rng(1)
    x, xp = rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
    q, qp = _unit(rng, 6), rng.standard_normal((6, 4))
    want = np.mean(_stable_norm(xp - x) + 7.0 * _stable_norm(qp - q))
    assert fixed_beta_loss(x, xp, q, qp, beta=7.0).item() == pytest.approx(want, rel=1e-13)


@pytest.mark.parametrize("beta", [0.0, -1.0])
def test_fixed_beta_rejects_bad_beta(beta):
    with pytest.raises(ValueError):
        fixed_beta_loss([0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0, 0], [1.0, 0, 0, 0], beta=beta)


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_losses_reject_non_finite(bad):
    x = np.array([0.0, bad, 0])
    with pytest.raises(NumericalError):
        fixed_beta_loss(x, [0.0, 0, 0], [1.0, 0, 0, 0], [1.0, 0, 0, 0])
    with pytest.raises(NumericalError):
        adaptive_loss([0.0, 0, 0], x, [1.0, 0, 0, 0], [1.0, 0, 0, 0], AdaptiveLossState.create())


def test_residual_shape_mismatch():
    with pytest.raises(ValueError):
        residual_norms(np.zeros((2, 3)), np.zeros((3, 3)))


def test_defaults():
    assert DEFAULT_BETA == 500.0
    assert (S_X_INIT, S_Q_INIT) == (0.0, -3.0)
    st = AdaptiveLossState()
    assert (st.s_x.item(), st.s_q.item()) == (0.0, -3.0)


# ---------------------------------------------------------------- adaptive

def test_adaptive_with_zero_log_variances_equals_beta_one():
    rng = np.random.default_rng(2)
    st = AdaptiveLossState.create(0.0, 0.0)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 6))
        x, xp = rng.standard_normal((n, 3)) * 3, rng.standard_normal((n, 3)) * 3
        q, qp = _unit(rng, n), rng.standard_normal((n, 4))
        a = adaptive_loss(x, xp, q, qp, st).item()
        f = fixed_beta_loss(x, xp, q, qp, beta=1.0).item()
        worst = max(worst, abs(a - f))
    assert worst < 1e-12


def test_adaptive_formula():
    rng = np.random.default_rng(3)
    x, xp = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    q, qp = _unit(rng, 4), rng.standard_normal((4, 4))
    st = AdaptiveLossState.create(0.7, -1.3)
    lx, lq = _stable_norm(xp - x).mean(), _stable_norm(qp - q).mean()
    want = lx * np.exp(-0.7) + 0.7 + lq * np.exp(1.3) - 1.3
    assert adaptive_loss(x, xp, q, qp, st).item() == pytest.approx(want, rel=1e-13)


def test_log_variance_gradient_formula():
    rng = np.random.default_rng(4)
    for _ in range(50):
        x, xp = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        q, qp = _unit(rng, 3), rng.standard_normal((3, 4))
        sx, sq = rng.uniform(-3, 3, size=2)
        st = AdaptiveLossState.create(sx, sq)
        with Tape() as tape:
            backward(adaptive_loss(x, Tensor(xp), q, Tensor(qp), st), tape)
        assert st.s_x.grad == pytest.approx(-_stable_norm(xp - x).mean() * np.exp(-sx) + 1, abs=1e-9)
        assert st.s_q.grad == pytest.approx(-_stable_norm(qp - q).mean() * np.exp(-sq) + 1, abs=1e-9)


def test_unit_residual_is_stationary_in_s_x():
    st = AdaptiveLossState.create(0.0, 0.0)
    with Tape() as tape:
        backward(adaptive_loss([0.0, 0, 0], Tensor([1.0, 0, 0]), [1.0, 0, 0, 0], Tensor([1.0, 0, 0, 0]), st), tape)
    assert abs(st.s_x.grad) < 1e-9


def test_adaptive_gradient_check():
    rng = np.random.default_rng(5)
    xp = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    qp = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    x, q = rng.standard_normal((3, 3)), _unit(rng, 3)
    st = AdaptiveLossState.create(0.2, -2.0)
    assert grad_check(lambda: adaptive_loss(x, xp, q, qp, st), [xp, qp] + st.parameters()) < 1e-6


# ---------------------------------------------------------------- Adam

def test_adam_defaults():
    s = AdamState()
    assert (s.lr, s.beta1, s.beta2, s.eps) == (0.0001, 0.9, 0.999, 1e-08)


@pytest.mark.parametrize("g", [10.0, -10.0, 0.003])
def test_adam_first_step_is_about_lr(g):
    p = Tensor(np.array(1.0), requires_grad=True)
    s = AdamState()
    assert adam_step([p], [np.array(g)], s)
    # m_hat = g, v_hat = g^2, so the move is lr * g / (|g| + eps)
    assert 1.0 - p.item() == pytest.approx(1e-4 * g / (abs(g) + 1e-8), rel=1e-12)
    assert s.t == 1


def test_adam_matches_reference_over_steps():
    rng = np.random.default_rng(6)
    p = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    ref = p.data.copy()
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    s = AdamState(lr=0.01)
    for t in range(1, 6):
        g = rng.standard_normal((3, 2))
        adam_step([p], [g], s)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-12, atol=1e-15)
    assert s.t == 5


def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    adam_step([p], [np.zeros(2)], AdamState())
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_missing_gradient_counts_as_zero():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    adam_step([p], [None], AdamState())
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_rejects_non_finite(caplog):
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    r = Tensor(np.array(3.0), requires_grad=True)
    s = AdamState()
    with caplog.at_level(logging.WARNING, logger="poselab.loss_optim"):
        ok = adam_step([r, p], [np.array(1.0), np.array([0.5, np.nan])], s)
    assert not ok
    assert r.item() == 3.0 and list(p.data) == [1.0, 2.0]
    assert s.t == 0 and s.rejected == 1 and not s.m
    assert "rejected" in caplog.text


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([Tensor(np.zeros(2))], [np.zeros(3)], AdamState())


def test_adam_odd_symmetry():
    rng = np.random.default_rng(7)
    p0, g = rng.standard_normal(5), rng.standard_normal(5)
    a = Tensor(p0.copy(), requires_grad=True)
    b = Tensor(-p0, requires_grad=True)
    adam_step([a], [g], AdamState())
    adam_step([b], [-g], AdamState())
    np.testing.assert_array_equal(a.data, -b.data)


# ---------------------------------------------------------------- training step

def _toy_batch(rng, n=4):
    return Batch(rng.random((n, 3, 8, 8)), rng.standard_normal((n, 3)), _unit(rng, n))


def test_zero_lr_gives_identical_losses():
    rng = np.random.default_rng(8)
    model = PoseModel(TINY, HeadConfig(fc_hidden=16), seed=0)
    batch = _toy_batch(rng)
    opt = AdamState(lr=0.0)
    st = AdaptiveLossState.create()
    a = training_step(batch, model, "adaptive", opt, st)
    b = training_step(batch, model, "adaptive", opt, st)
    assert a.loss == b.loss
    assert a.accepted and b.accepted


@pytest.mark.parametrize("kind", ["adaptive", "fixed_beta"])
def test_memorization_loss_decreases(kind):
    rng = np.random.default_rng(9)
    model = PoseModel(TINY, HeadConfig(fc_hidden=32), seed=1)
    batch = _toy_batch(rng)
    opt = AdamState(lr=1e-3)
    st = AdaptiveLossState.create() if kind == "adaptive" else None
    losses = [training_step(batch, model, kind, opt, st, beta=10.0).loss for _ in range(50)]
    assert losses[-1] < 0.5 * losses[0]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


def test_training_step_lstm_windows():
    rng = np.random.default_rng(10)
    model = PoseModel(TINY, HeadConfig(kind="lstm", lstm_units=4, sequence_length=3), seed=2)
    batch = Batch(rng.random((4, 3, 8, 8)), rng.standard_normal((2, 3)), _unit(rng, 2),
                  windows=np.array([[0, 1, 2], [1, 2, 3]]))
    m = training_step(batch, model, "adaptive", AdamState(), AdaptiveLossState.create())
    assert isinstance(m, StepMetrics) and m.accepted and m.grad_norm > 0


def test_adaptive_step_moves_log_variances():
    rng = np.random.default_rng(11)
    model = PoseModel(TINY, HeadConfig(fc_hidden=8), seed=3)
    st = AdaptiveLossState.create()
    m = training_step(_toy_batch(rng), model, "adaptive", AdamState(), st)
    assert m.s_x != 0.0 and m.s_q != -3.0


def test_training_step_errors():
    rng = np.random.default_rng(12)
    model = PoseModel(TINY, HeadConfig(fc_hidden=8), seed=4)
    with pytest.raises(ValueError):
        training_step(_toy_batch(rng), model, "adaptive", AdamState(), None)
    with pytest.raises(ValueError):
        compute_loss(model, _toy_batch(rng), "hinge")
    with pytest.raises(ValueError):
        training_step(Batch(np.zeros((0, 3, 8, 8)), np.zeros((0, 3)), np.zeros((0, 4))), model, "fixed_beta",
                      AdamState())


def test_failed_step_leaves_model_unchanged():
    rng = np.random.default_rng(13)
    model = PoseModel(TINY, HeadConfig(fc_hidden=8), seed=5)
    before = {k: v.data.copy() for k, v in model.params.items()}
    batch = _toy_batch(rng)
    batch.images[0, 0, 0, 0] = np.nan
    opt = AdamState()
    try:
        m = training_step(batch, model, "fixed_beta", opt)
        assert not m.accepted and opt.rejected == 1
    except NumericalError:
        pass
    assert all(np.array_equal(before[k], model.params[k].data) for k in before)


def test_same_seed_same_trajectory():
    def run():
        rng = np.random.default_rng(14)
        model = PoseModel(TINY, HeadConfig(fc_hidden=8), seed=6)
        opt, st = AdamState(lr=1e-3), AdaptiveLossState.create()
        return [training_step(_toy_batch(rng), model, "adaptive", opt, st).loss for _ in range(5)]
    assert run() == run()


# ---------------------------------------------------------------- metrics log

def test_metrics_log_columns(tmp_path):
    path = tmp_path / "log" / "train.csv"
    with MetricsLog(path) as log:
        log.append(1, 1, StepMetrics(2.5, 0.1, 0.0, -3.0, True))
        log.append(2, 1, StepMetrics(2.25, 0.2, 0.01, -2.99, True))
    rows = list(csv.reader(open(path, encoding="utf-8")))
    assert tuple(rows[0]) == LOG_COLUMNS == ("step", "epoch", "loss", "s_x", "s_q", "grad_norm")
    assert rows[1] == ["1", "1", "2.5", "0.0", "-3.0", "0.1"]
    assert len(rows) == 3
