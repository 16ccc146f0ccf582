"""File formats: feature/rating CSVs, versioned label and prediction files,
binary checkpoints, the dataset manifest and JSON reports.

Loaders reject malformed input instead of repairing it; every error names
the file and, where it applies, the row and column.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .labels import MomentSequence, RaterMatrix
from .net import GoverningNetwork

FORMAT_VERSION = 1
VERSION_LINE = f"# format_version: {FORMAT_VERSION}"
CHECKPOINT_MAGIC = b"CDNODE-CHECKPOINT\n"


class DataError(ValueError):
    """Malformed or inconsistent input file."""


def _fmt(v) -> str:
    return repr(float(v))


def _read_rows(path):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            return list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from None


def _load_frame_table(path, prefix):
    """Parse ``frame,<prefix>0..<prefix>K-1`` into a float matrix, checking everything."""
    rows = _read_rows(path)
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    ncol = len(header) - 1
    expected = ["frame"] + [f"{prefix}{i}" for i in range(ncol)]
    if ncol < 1 or header != expected:
        raise DataError(f"{path}: malformed header {','.join(header)!r}; expected 'frame,{prefix}0..{prefix}K-1'")
    body = rows[1:]
    values = np.empty((len(body), ncol))
    for i, row in enumerate(body, start=2):
        if len(row) != ncol + 1:
            raise DataError(f"{path}: row {i} has {len(row)} cells, expected {ncol + 1}")
        try:
            frame = int(row[0])
        except ValueError:
            raise DataError(f"{path}: row {i}, column frame: {row[0]!r} is not an integer") from None
        if frame != i - 2:
            raise DataError(f"{path}: gap at frame {i - 2} (row {i} has frame {frame})")
        for j, cell in enumerate(row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i}, column {header[j + 1]}: {cell!r} is not numeric") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {i}, column {header[j + 1]}: non-finite value {cell!r}")
            values[i - 2, j] = v
    if len(body) == 0:
        raise DataError(f"{path}: no frames")
    return values


def _write_frame_table(path, values, prefix):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values, dtype=float)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame"] + [f"{prefix}{i}" for i in range(values.shape[1])])
        for n, row in enumerate(values):
            w.writerow([n] + [_fmt(v) for v in row])


def load_features(path) -> np.ndarray:
    """Feature matrix (N, D) from ``frame,f0..f{D-1}``."""
    return _load_frame_table(path, "f")


def write_features(path, X) -> None:
    _write_frame_table(path, X, "f")


def load_ratings(path, frame_period: float = 0.04) -> RaterMatrix:
    values = _load_frame_table(path, "r")
    if values.shape[1] < 2:
        raise DataError(f"{path}: at least 2 raters are required, found {values.shape[1]}")
    bad = np.argwhere((values < -1) | (values > 1))
    if len(bad):
        r, c = bad[0]
        raise DataError(f"{path}: row {r + 2}, column r{c}: rating {values[r, c]} outside [-1, 1]")
    return RaterMatrix(values, frame_period)


def write_ratings(path, values) -> None:
    _write_frame_table(path, values, "r")


# --- versioned (frame_index, mu, sigma) tables --------------------------------


def _write_moment_table(path, frame_index, mu, sigma):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(VERSION_LINE + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "mu", "sigma"])
        for n, m, s in zip(frame_index, mu, sigma):
            w.writerow([int(n), _fmt(m), _fmt(s)])


def _check_version_line(path, line):
    prefix = "# format_version:"
    if not line.startswith(prefix):
        raise DataError(f"{path}: missing format version line")
    found = line[len(prefix):].strip()
    if found != str(FORMAT_VERSION):
        raise DataError(f"{path}: format version {found!r} is not supported (expected {FORMAT_VERSION})")


def _read_moment_table(path):
    rows = _read_rows(path)
    if not rows or not rows[0]:
        raise DataError(f"{path}: empty file")
    _check_version_line(path, ",".join(rows[0]))
    if len(rows) < 2 or rows[1] != ["frame_index", "mu", "sigma"]:
        raise DataError(f"{path}: expected header 'frame_index,mu,sigma'")
    idx, vals = [], []
    for i, row in enumerate(rows[2:], start=3):
        if len(row) != 3:
            raise DataError(f"{path}: row {i} has {len(row)} cells, expected 3")
        try:
            idx.append(int(row[0]))
            vals.append((float(row[1]), float(row[2])))
        except ValueError:
            raise DataError(f"{path}: row {i}: non-numeric cell in {row!r}") from None
        if not all(math.isfinite(v) for v in vals[-1]):
            raise DataError(f"{path}: row {i}: non-finite value")
    idx = np.array(idx, dtype=int)
    if len(idx) and np.any(np.diff(idx) != 1):
        k = int(np.argmax(np.diff(idx) != 1))
        raise DataError(f"{path}: frame_index not contiguous after {idx[k]}")
    return idx, np.array(vals).reshape(-1, 2)


def write_labels(path, labels: MomentSequence) -> None:
    _write_moment_table(path, labels.frame_index, labels.mu, labels.sigma)


def read_labels(path, frame_period: float = 0.04) -> MomentSequence:
    idx, v = _read_moment_table(path)
    start = int(idx[0]) if len(idx) else 0
    try:
        return MomentSequence(v[:, 0], v[:, 1], frame_period, start)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_predictions(path, outputs, start_frame: int = 0) -> None:
    """Predicted (mu, sigma) per frame; values may be invalid Beta moments for unconstrained models."""
    outputs = np.asarray(outputs, dtype=float)
    _write_moment_table(path, start_frame + np.arange(len(outputs)), outputs[:, 0], outputs[:, 1])


def read_predictions(path):
    """Returns ``(frame_index, outputs)`` with ``outputs`` of shape (N, 2)."""
    return _read_moment_table(path)


# --- checkpoints -------------------------------------------------------------


def write_checkpoint(path, net: GoverningNetwork, meta: dict | None = None) -> None:
    """Magic line, one JSON header line, then the parameters as little-endian float64."""
    header = {
        "format_version": FORMAT_VERSION,
        "d_in": net.d_in,
        "hidden": net.hidden,
        "seed": net.seed,
        "n_params": net.size,
        "meta": meta or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.asarray(net.params, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Returns ``(net, meta)``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from None
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path}: not a checkpoint file")
    rest = raw[len(CHECKPOINT_MAGIC):]
    nl = rest.find(b"\n")
    try:
        header = json.loads(rest[:nl])
    except (ValueError, UnicodeDecodeError):
        raise DataError(f"{path}: corrupt checkpoint header") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: checkpoint format version {header.get('format_version')!r} is not supported "
            f"(expected {FORMAT_VERSION})"
        )
    params = np.frombuffer(rest[nl + 1:], dtype="<f8").astype(float)
    if params.size != header["n_params"]:
        raise DataError(f"{path}: expected {header['n_params']} parameters, found {params.size}")
    net = GoverningNetwork(header["d_in"], header["hidden"], header["seed"], params)
    return net, header["meta"]


# --- manifest ----------------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    partition: str
    feature_file: str
    ratings_file: str | None = None
    label_file: str | None = None
    truth_file: str | None = None


@dataclass
class DatasetManifest:
    entries: list
    frame_period: float = 0.04
    root: Path = Path(".")

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise DataError(f"duplicate utterance ids in manifest: {sorted(dup)}")
        for e in self.entries:
            if e.partition not in ("train", "dev"):
                raise DataError(f"utterance {e.id}: partition must be 'train' or 'dev', got {e.partition!r}")
            if e.ratings_file is None and e.label_file is None:
                raise DataError(f"utterance {e.id}: needs a ratings_file or a label_file")

    def partition(self, name):
        return [e for e in self.entries if e.partition == name]

    def path(self, rel) -> Path:
        return self.root / rel

    def check_files(self):
        for e in self.entries:
            for rel in (e.feature_file, e.ratings_file, e.label_file, e.truth_file):
                if rel is not None and not self.path(rel).exists():
                    raise DataError(f"utterance {e.id}: missing file {self.path(rel)}")


def write_manifest(path, m: DatasetManifest) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "frame_period": m.frame_period,
        "utterances": [{k: v for k, v in vars(e).items() if v is not None} for e in m.entries],
    }
    write_json(path, doc)


def read_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    doc = read_json(path)
    try:
        entries = [ManifestEntry(**u) for u in doc["utterances"]]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed manifest ({exc})") from None
    m = DatasetManifest(entries, doc.get("frame_period", 0.04), path.parent)
    if check_files:
        m.check_files()
    return m


# --- JSON --------------------------------------------------------------------


def write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(doc)
    doc.setdefault("format_version", FORMAT_VERSION)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from None
    except ValueError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: format version {doc.get('format_version')!r} is not supported (expected {FORMAT_VERSION})")
    return doc


def append_jsonl(path, record) -> None:
    with Path(path).open("a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_report(path, report) -> None:
    write_json(path, report.to_dict())


def read_report(path):
    from .metrics import EvalReport

    doc = read_json(path)
    doc.pop("format_version")
    return EvalReport.from_dict(doc)


def write_decile_csv(path, report) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    e = report.decile_edges
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["decile_index", "sd_low", "sd_high", "rmse", "count"])
        for d in range(10):
            w.writerow([d, _fmt(e[d]), _fmt(e[d + 1]), _fmt(report.rmse_by_decile[d]), report.decile_counts[d]])
