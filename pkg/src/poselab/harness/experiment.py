"""Train, evaluate and write every artifact of one experiment."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..autodiff import Tensor, take_rows
from ..dataset_io import read_manifest
from ..loss_optim import (
    AdamState, AdaptiveLossState, Batch, MetricsLog, NumericalError, training_step,
)
from ..model import (
    PoseModel, fc_head_forward, feature_similarity, lstm_head_forward, parameter_count, save_checkpoint,
)
from ..synthetic import generate_dataset
from .config import ExperimentConfig
from .data import SplitData, epoch_training_set, pipeline_record, prepare_split, window_indices
from .evaluate import EvalReport, report_from_predictions
from .tables import emit_table

log = logging.getLogger(__name__)

OUTPUT_ENV = "POSELAB_OUTPUT"
EVAL_CHUNK = 32


def output_root(default: str = "runs") -> Path:
    return Path(os.environ.get(OUTPUT_ENV, default))


# ---------------------------------------------------------------- evaluation

def predict(model: PoseModel, inputs: np.ndarray, windows: Optional[np.ndarray] = None) -> tuple:
    """(N x 3, N x 4) predictions; the backbone runs in chunks, once per frame."""
    feats = Tensor(np.concatenate([model.features(inputs[i:i + EVAL_CHUNK].astype(np.float64)).data
                                   for i in range(0, len(inputs), EVAL_CHUNK)]))
    if model.head.kind == "fc":
        if windows is not None:
            feats = take_rows(feats, windows[:, -1])
        x, q = fc_head_forward(feats, model.params)
    else:
        if windows is None:
            windows = np.arange(len(inputs))[:, None]
        steps = [take_rows(feats, windows[:, t]) for t in range(windows.shape[1])]
        x, q = lstm_head_forward(steps, model.head.sequence_length, model.params, model.head)
    return x.data, q.data


def split_windows(model: PoseModel, split: SplitData, cfg: Optional[ExperimentConfig] = None) -> Optional[np.ndarray]:
    if model.head.kind != "lstm":
        return None
    allow = cfg.allow_unordered_windows if cfg is not None else False
    return window_indices(split.manifest.entries, split.manifest.source_format,
                          model.head.sequence_length, allow_unordered=allow)


def evaluate(model: PoseModel, split: SplitData, cfg: Optional[ExperimentConfig] = None) -> EvalReport:
    """Median errors per frame, or per window (scored on its last frame) for LSTM heads."""
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty manifest")
    windows = split_windows(model, split, cfg)
    if windows is not None and len(windows) == 0:
        raise ValueError(f"no window of length {model.head.sequence_length} fits the evaluation set")
    x_pred, q_pred = predict(model, split.inputs, windows)
    target = slice(None) if windows is None else windows[:, -1]
    return report_from_predictions(split.x[target], split.q[target], x_pred, q_pred)


def evaluate_manifest(model: PoseModel, manifest, preprocessing: str, scene=None) -> EvalReport:
    return evaluate(model, prepare_split(manifest, preprocessing, scene))


# ---------------------------------------------------------------- data

def load_data(cfg: ExperimentConfig) -> tuple:
    if cfg.dataset == "synthetic":
        scene = cfg.scene_config()
        train_m, test_m = generate_dataset(scene, cfg.trajectory_config(), rng_seed=cfg.data_seed)
        return prepare_split(train_m, cfg.preprocessing, scene), prepare_split(test_m, cfg.preprocessing, scene)
    train_m = read_manifest(cfg.train_manifest, check_paths=True)
    test_m = read_manifest(cfg.test_manifest, check_paths=True)
    return prepare_split(train_m, cfg.preprocessing), prepare_split(test_m, cfg.preprocessing)


def _batches(cfg: ExperimentConfig, model: PoseModel, inputs, x, q, entries, source_format, rng):
    if model.head.kind == "fc":
        order = rng.permutation(len(inputs))
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            yield Batch(inputs[idx].astype(np.float64), x[idx], q[idx])
        return
    wins = window_indices(entries, source_format, model.head.sequence_length,
                          cfg.windows_include_augmented, cfg.allow_unordered_windows)
    if len(wins) == 0:
        raise ValueError(f"no training window of length {model.head.sequence_length}")
    order = rng.permutation(len(wins))
    for i in range(0, len(order), cfg.batch_size):
        w = wins[order[i:i + cfg.batch_size]]
        # each frame runs through the backbone once per batch
        frames, local = np.unique(w, return_inverse=True)
        yield Batch(inputs[frames].astype(np.float64), x[w[:, -1]], q[w[:, -1]],
                    windows=local.reshape(w.shape))


# ---------------------------------------------------------------- run

@dataclass
class RunResult:
    report: EvalReport                     # test set, with learning curves
    train_report: EvalReport
    model: PoseModel
    artifacts: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def _curve_point(model, train, test, cfg) -> dict:
    tr = evaluate(model, train, cfg)
    te = evaluate(model, test, cfg)
    return {"train_pos": tr.median_position, "train_ori": tr.median_orientation,
            "test_pos": te.median_position, "test_ori": te.median_orientation}


def run_experiment(cfg: ExperimentConfig, out_dir=None, data: Optional[tuple] = None) -> RunResult:
    """Train per ``cfg`` and write its artifacts under ``out_dir`` (skipped when None).

    Artifacts: config echo, per-step CSV log, learning curves CSV, report
    JSON, checkpoint, a one-row markdown table and, with ``plot``, a PNG of
    the curves. ``data`` may pass pre-built (train, test) splits.
    """
    train, test = data if data is not None else load_data(cfg)
    model = PoseModel(cfg.backbone_config(), cfg.head_config(), seed=cfg.seed)
    opt = AdamState(lr=cfg.lr)
    loss_state = AdaptiveLossState.create(cfg.s_x_init, cfg.s_q_init) if cfg.loss == "adaptive" else None

    out = Path(out_dir) if out_dir is not None else None
    artifacts = {}
    metrics_log = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
        artifacts["config"] = out / "config.txt"
        metrics_log = MetricsLog(out / "train_log.csv")
        artifacts["log"] = metrics_log.path

    curves = {0: _curve_point(model, train, test, cfg)}
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            inputs, x, q, entries = epoch_training_set(train, cfg.preprocessing, cfg.augment,
                                                       (cfg.aug_lo, cfg.aug_hi), cfg.seed, epoch)
            rng = np.random.default_rng([cfg.seed, epoch, 5])
            for batch in _batches(cfg, model, inputs, x, q, entries, train.manifest.source_format, rng):
                m = training_step(batch, model, cfg.loss, opt, loss_state, cfg.beta)
                step += 1
                if metrics_log is not None:
                    metrics_log.append(step, epoch, m)
                if opt.rejected > cfg.max_rejected_steps:
                    raise NumericalError(f"{opt.rejected} optimizer steps rejected for non-finite values")
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                curves[epoch] = _curve_point(model, train, test, cfg)
    finally:
        if metrics_log is not None:
            metrics_log.close()

    report = evaluate(model, test, cfg)
    report.curves = curves
    train_report = evaluate(model, train, cfg)
    summary = {
        "name": cfg.name,
        "test_median_position_m": report.median_position,
        "test_median_orientation_deg": report.median_orientation,
        "train_median_position_m": train_report.median_position,
        "train_median_orientation_deg": train_report.median_orientation,
        "untrained_test_median_position_m": curves[0]["test_pos"],
        "untrained_test_median_orientation_deg": curves[0]["test_ori"],
        "parameter_count": parameter_count(model.backbone, model.head),
        "steps": step,
        "rejected_steps": opt.rejected,
        "s_x": loss_state.s_x.item() if loss_state else None,
        "s_q": loss_state.s_q.item() if loss_state else None,
        "consecutive_feature_similarity": consecutive_similarity(model, test),
    }
    result = RunResult(report, train_report, model, artifacts, summary)
    if out is not None:
        _write_artifacts(cfg, result, out)
    return result


def consecutive_similarity(model: PoseModel, split: SplitData, limit: int = 64) -> Optional[float]:
    """Mean cosine similarity of backbone features of neighbouring frames."""
    n = min(len(split), limit)
    if n < 2:
        return None
    feats = model.features(split.inputs[:n].astype(np.float64)).data
    return float(np.mean([feature_similarity(feats[i], feats[i + 1]) for i in range(n - 1)]))


def _write_artifacts(cfg: ExperimentConfig, result: RunResult, out: Path) -> None:
    a = result.artifacts
    report = {"config": cfg.to_dict(), "summary": result.summary,
              "pipeline": pipeline_record(cfg.preprocessing, cfg.augment),
              "test": result.report.to_dict(), "train": result.train_report.to_dict()}
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True), encoding="utf-8")
    a["report"] = out / "report.json"
    save_checkpoint(result.model, out / "checkpoint.npz",
                    extra={"experiment": cfg.name, "preprocessing": cfg.preprocessing})
    a["checkpoint"] = out / "checkpoint.npz"
    with open(out / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_pos", "train_ori", "test_pos", "test_ori"])
        for epoch, c in sorted(result.report.curves.items()):
            w.writerow([epoch, repr(c["train_pos"]), repr(c["train_ori"]), repr(c["test_pos"]), repr(c["test_ori"])])
    a["curves"] = out / "curves.csv"
    row = cfg.table_row or cfg.name
    table = emit_table({row: {"Median error": result.report}}, "run")
    (out / "row.md").write_text(table.markdown, encoding="utf-8")
    a["row"] = out / "row.md"
    if cfg.plot:
        path = plot_curves(result.report.curves, out / "curves.png", cfg.name)
        if path is not None:
            a["plot"] = path


def plot_curves(curves: dict, path, title: str = "") -> Optional[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", path)
        return None
    epochs = sorted(curves)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, key, unit in ((axes[0], "pos", "m"), (axes[1], "ori", "deg")):
        ax.plot(epochs, [curves[e][f"train_{key}"] for e in epochs], color="tab:blue", label="train")
        ax.plot(epochs, [curves[e][f"test_{key}"] for e in epochs], color="tab:red", label="test")
        ax.set_xlabel("epoch")
        ax.set_ylabel(f"median error ({unit})")
        ax.legend()
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
