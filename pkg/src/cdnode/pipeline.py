"""End-to-end steps on a dataset directory: synthesize, fit labels, train,
predict, evaluate and the constraint ablation.

Every step reads and writes files through :mod:`cdnode.data` so runs can be
resumed and inspected.  Layout under a dataset root::

    manifest.json
    features/<id>.csv   ratings/<id>.csv   truth/<id>.csv   labels/<id>.csv
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from . import data, labels, metrics, synth
from .config import RunConfig
from .net import init_network
from .training import Utterance, predict, train

log = logging.getLogger(__name__)

SYSTEM_NAMES = {"none": "D-NODE", "rate_only": "CD-NODE", "rate_and_range": "CD-NODE_gamma"}


def run_synth(out_dir, cfg: RunConfig = RunConfig()) -> Path:
    return synth.write_dataset(out_dir, cfg.synth())


def run_fit_labels(manifest_path, cfg: RunConfig = RunConfig()) -> Path:
    """Fit labels for every utterance with ratings; the KDE prior comes from the train partition."""
    manifest = data.read_manifest(manifest_path)
    rated = [e for e in manifest.entries if e.ratings_file]
    if not rated:
        raise data.DataError(f"{manifest_path}: no utterance has a ratings_file")
    fp = manifest.frame_period
    ratings = {e.id: data.load_ratings(manifest.path(e.ratings_file), fp) for e in rated}
    window, grid = cfg.window(), cfg.grid()
    prior = labels.PriorDensity()
    if cfg["label.prior"] == "kde":
        train_ids = [e.id for e in rated if e.partition == "train"] or [e.id for e in rated]
        _, prior = labels.fit_partition([ratings[i] for i in train_ids], window, grid)
    fitter = labels.GridFitter(prior, grid)
    for e in rated:
        seq = labels.fit_sequence(ratings[e.id], window, fitter=fitter)
        e.label_file = f"labels/{e.id}.csv"
        data.write_labels(manifest.path(e.label_file), seq)
    data.write_manifest(manifest_path, manifest)
    return Path(manifest_path)


def load_split(manifest, partition, cfg: RunConfig):
    """Delay-compensated utterances of one partition."""
    out = []
    for e in manifest.partition(partition):
        if e.label_file is None:
            raise data.DataError(f"utterance {e.id} has no label file; run fit-labels first")
        X = data.load_features(manifest.path(e.feature_file))
        L = data.read_labels(manifest.path(e.label_file), manifest.frame_period)
        X, L = metrics.delay_compensate(X, L, cfg["data.delay_s"], manifest.frame_period)
        out.append(Utterance(e.id, X, L))
    return out


def run_train(manifest_path, out_dir, cfg: RunConfig = RunConfig(), mode=None):
    """Train and write ``checkpoint.bin`` (best epoch), ``metrics.jsonl`` and ``config.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = data.read_manifest(manifest_path)
    train_set = load_split(manifest, "train", cfg)
    if not train_set:
        raise data.DataError(f"{manifest_path}: no training utterances")
    dev_set = load_split(manifest, "dev", cfg)
    cc = cfg.constraint(mode)
    d_in = cfg["model.d_in"] or train_set[0].features.shape[1]
    net = init_network(d_in, cfg["model.hidden"], cfg["seed"], cfg["model.final_scale"])
    metrics_path = out_dir / "metrics.jsonl"
    metrics_path.write_text("")
    result = train(
        train_set, net, cc, cfg.train(), cfg.loss(), cfg.solve(),
        dev=dev_set or None,
        on_epoch=lambda rec, _: data.append_jsonl(metrics_path, rec),
    )
    meta = {"constraint": _constraint_meta(cc), "best_epoch": result.best_epoch}
    data.write_checkpoint(out_dir / "checkpoint.bin", result.net, meta)
    (out_dir / "config.txt").write_text(cfg.dump())
    return result


def _constraint_meta(cc) -> dict:
    return {k: getattr(cc, k) for k in cc.__dataclass_fields__}


def run_predict(checkpoint, manifest_path, out_dir, cfg: RunConfig = RunConfig(), partition="dev"):
    """Predict every utterance of ``partition``; frame indices are on the label timeline."""
    from .constraints import ConstraintConfig

    net, meta = data.read_checkpoint(checkpoint)
    cc = ConstraintConfig(**meta["constraint"])
    manifest = data.read_manifest(manifest_path)
    d = metrics.delay_frames(cfg["data.delay_s"], manifest.frame_period)
    sc = cfg.predict_solve()
    out_dir = Path(out_dir)
    written = []
    for e in manifest.partition(partition):
        X = data.load_features(manifest.path(e.feature_file))
        if X.shape[1] != net.d_in:
            raise data.DataError(f"{e.feature_file}: {X.shape[1]} features, checkpoint expects {net.d_in}")
        X = X[: len(X) - d] if d else X
        out = predict(net, cc, X, sc)
        path = out_dir / f"{e.id}.csv"
        data.write_predictions(path, out, start_frame=d)
        written.append(path)
    return written


def _paired(manifest, pred_dir, partition, truth_kind="label"):
    preds, truths, ids = [], [], []
    for e in manifest.partition(partition):
        rel = e.label_file if truth_kind == "label" else e.truth_file
        if rel is None:
            raise data.DataError(f"utterance {e.id} has no {truth_kind} file")
        idx, out = data.read_predictions(Path(pred_dir) / f"{e.id}.csv")
        lab = data.read_labels(manifest.path(rel), manifest.frame_period)
        pos = idx - lab.start_frame
        if len(pos) == 0 or pos[0] < 0 or pos[-1] >= len(lab):
            raise data.DataError(f"predictions for {e.id} fall outside its label frames")
        preds.append(out)
        truths.append(np.column_stack([lab.mu[pos], lab.sigma[pos]]))
        ids.append(e.id)
    if not preds:
        raise data.DataError(f"no utterances in partition {partition!r}")
    return ids, preds, truths


def run_evaluate(pred_dir, manifest_path, out_dir, cfg: RunConfig = RunConfig(), partition="dev", truth_kind="label"):
    """Score predictions; writes ``report.json`` and ``deciles.csv``."""
    manifest = data.read_manifest(manifest_path)
    ids, preds, truths = _paired(manifest, pred_dir, partition, truth_kind)
    report = metrics.evaluate(preds, truths, cfg["eval.smooth_frames"])
    if report.per_utterance is not None:
        report.per_utterance["id"] = ids
    out_dir = Path(out_dir)
    data.write_report(out_dir / "report.json", report)
    data.write_decile_csv(out_dir / "deciles.csv", report)
    return report


def output_validity(outputs, cc) -> np.ndarray:
    """Per-frame flag: prediction inside ``(0, p) x (0, q)``."""
    outputs = np.asarray(outputs)
    return (outputs[:, 0] > 0) & (outputs[:, 0] < cc.p) & (outputs[:, 1] > 0) & (outputs[:, 1] < cc.q)


ABLATION_COLUMNS = (
    ["system", "mode", "ccc_mu", "ccc_sigma"]
    + [f"rmse_d{d}" for d in range(10)]
    + ["frames", "frames_in_range", "utterances_out_of_range", "best_epoch"]
)


def run_ablate(manifest_path, out_dir, cfg: RunConfig = RunConfig(), modes=tuple(SYSTEM_NAMES)):
    """Train, predict and evaluate each constraint mode on the same data and seed.

    Writes ``ablation.csv`` with one row per system.  Range validity is
    checked against the p and q of the run configuration for every mode.
    """
    out_dir = Path(out_dir)
    manifest = data.read_manifest(manifest_path)
    ref = cfg.constraint()
    rows = []
    for mode in modes:
        sub = out_dir / mode
        result = run_train(manifest_path, sub, cfg, mode=mode)
        pred_paths = []
        for part in ("train", "dev"):
            pred_paths += run_predict(sub / "checkpoint.bin", manifest_path, sub / "predictions" / part, cfg, part)
        part = "dev" if manifest.partition("dev") else "train"
        report = run_evaluate(sub / "predictions" / part, manifest_path, sub, cfg, part)
        valid = [output_validity(data.read_predictions(p)[1], ref) for p in pred_paths]
        rows.append(
            [SYSTEM_NAMES[mode], mode, report.ccc_mu, report.ccc_sigma, *report.rmse_by_decile,
             sum(v.size for v in valid), int(sum(v.sum() for v in valid)),
             sum(int(not v.all()) for v in valid), result.best_epoch]
        )
    path = out_dir / "ablation.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return path, rows
