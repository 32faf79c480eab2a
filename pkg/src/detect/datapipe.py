"""Recording ingestion and the window preprocessing chain.

Recording CSV layout (UTF-8, LF, dot decimals)::

    patient_id,phase,activity,placement,rate_hz
    12345,pre,walk,nondominant_hand,100
    t,ax,ay,az,gx,gy,gz
    0.000000,0.120000,...

Accelerations are in m/s^2, angular velocities in rad/s.
"""
from __future__ import annotations

import hashlib
import io
import logging
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import binio
from .errors import ContractError, IngestionError, PreprocessingError, SplitError

log = logging.getLogger(__name__)

PHASES = ("pre", "post")
ACTIVITIES = ("sit", "walk", "stairs")
PLACEMENTS = ("nondominant_hand", "pant_pocket")
SUPPORTED_RATES = (50.0, 100.0)
CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")

META_HEADER = ("patient_id", "phase", "activity", "placement", "rate_hz")
SAMPLE_HEADER = ("t",) + CHANNELS

# public-dataset label spellings folded onto the three-class set
ACTIVITY_ALIASES = {
    "sitting": "sit",
    "walking": "walk",
    "upstairs": "stairs",
    "downstairs": "stairs",
    "stair": "stairs",
    "stairs_up": "stairs",
    "stairs_down": "stairs",
}

WINDOW_CACHE_VERSION = 1
_FILENAME_RE = re.compile(r"^(?P<stem>.+)_(?P<trial>\d+)$")


@dataclass
class SensorRecording:
    patient_id: str
    phase: str
    activity: str
    placement: str
    sample_rate_hz: float
    samples: np.ndarray  # (count, 6)
    timestamps: np.ndarray | None = None
    trial: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != len(CHANNELS):
            raise ContractError(f"samples must be (count, 6), got {self.samples.shape}")
        if self.timestamps is None:
            self.timestamps = np.arange(len(self.samples)) / self.sample_rate_hz

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class Window:
    values: np.ndarray
    label: int
    source: tuple  # (patient_id, phase, activity, placement, trial, start_index)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def fingerprint(self):
        h = hashlib.sha256(self.mean.tobytes() + self.std.tobytes())
        return h.hexdigest()


@dataclass
class WindowSet:
    """Fixed-length labelled windows stored as one ``(N, n, 6)`` array."""

    values: np.ndarray
    labels: np.ndarray
    sources: list
    class_names: tuple = ACTIVITIES
    normalized: bool = False
    norm_stats: NormStats | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        if len(self.values) != len(self.labels) or len(self.labels) != len(self.sources):
            raise ContractError("values, labels and sources must have equal length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ContractError("label outside the class set")
        if self.normalized and self.norm_stats is None:
            raise ContractError("a normalized WindowSet must carry its stats")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return Window(self.values[i], int(self.labels[i]), self.sources[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            values=self.values[idx],
            labels=self.labels[idx],
            sources=[self.sources[i] for i in idx],
        )

    def where(self, predicate):
        """Windows whose source tuple satisfies ``predicate``."""
        return self.subset([i for i, s in enumerate(self.sources) if predicate(s)])

    def class_counts(self):
        return np.bincount(self.labels, minlength=len(self.class_names))

    @classmethod
    def from_windows(cls, windows, class_names=ACTIVITIES):
        windows = list(windows)
        if windows:
            values = np.stack([w.values for w in windows])
        else:
            values = np.zeros((0, 100, len(CHANNELS)))
        return cls(values, [w.label for w in windows], [w.source for w in windows], class_names)


# ingestion ------------------------------------------------------------------

def _parse_meta(fields, path):
    if len(fields) != len(META_HEADER):
        raise IngestionError(
            f"metadata row needs {len(META_HEADER)} fields, got {len(fields)}", path, 2
        )
    patient, phase, activity, placement, rate = (f.strip() for f in fields)
    activity = ACTIVITY_ALIASES.get(activity.lower(), activity.lower())
    if phase not in PHASES:
        raise IngestionError(f"unknown phase {phase!r}", path, 2)
    if activity not in ACTIVITIES:
        raise IngestionError(f"unknown activity {activity!r}", path, 2)
    if placement not in PLACEMENTS:
        raise IngestionError(f"unknown placement {placement!r}", path, 2)
    try:
        rate_hz = float(rate)
    except ValueError:
        raise IngestionError(f"non-numeric rate_hz {rate!r}", path, 2) from None
    if rate_hz not in SUPPORTED_RATES:
        raise IngestionError(f"unsupported sample rate {rate_hz} Hz", path, 2)
    return patient, phase, activity, placement, rate_hz


def _scan_rows(lines, path, first_line):
    """Slow row-by-row parse; only reached to locate a malformed row."""
    for offset, line in enumerate(lines):
        lineno = first_line + offset
        fields = line.split(",")
        if len(fields) != len(SAMPLE_HEADER):
            raise IngestionError(
                f"expected {len(SAMPLE_HEADER)} columns, got {len(fields)}", path, lineno
            )
        for name, raw in zip(SAMPLE_HEADER, fields):
            try:
                value = float(raw)
            except ValueError:
                raise IngestionError(f"non-numeric {name} value {raw!r}", path, lineno) from None
            if not math.isfinite(value):
                raise IngestionError(f"non-finite {name} value {raw!r}", path, lineno)
    raise IngestionError("malformed sample rows", path)


def read_recording(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read file: {exc}", path) from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 3:
        raise IngestionError("file too short for the recording schema", path)
    if tuple(h.strip() for h in lines[0].split(",")) != META_HEADER:
        raise IngestionError(f"first line must be {','.join(META_HEADER)}", path, 1)
    patient, phase, activity, placement, rate_hz = _parse_meta(lines[1].split(","), path)
    header = tuple(h.strip() for h in lines[2].split(","))
    missing = [c for c in SAMPLE_HEADER if c not in header]
    if missing or header != SAMPLE_HEADER:
        raise IngestionError(
            f"sample header must be {','.join(SAMPLE_HEADER)} (missing: {missing or 'order'})",
            path,
            3,
        )
    rows = lines[3:]
    if not rows:
        raise IngestionError("recording has no samples", path)
    try:
        table = np.loadtxt(io.StringIO("\n".join(rows)), delimiter=",", ndmin=2)
        ok = table.shape[1] == len(SAMPLE_HEADER)
    except ValueError:
        ok = False
    if not ok:
        _scan_rows(rows, path, 4)
    finite = np.isfinite(table).all(axis=1)
    if not finite.all():
        bad = int(np.argmin(finite))
        col = SAMPLE_HEADER[int(np.argmin(np.isfinite(table[bad])))]
        raise IngestionError(f"non-finite {col} value in row", path, 4 + bad)

    trial = 0
    m = _FILENAME_RE.match(path.stem)
    if m:
        trial = int(m.group("trial"))
    return SensorRecording(
        patient, phase, activity, placement, rate_hz, table[:, 1:], table[:, 0], trial
    )


def _is_recording_file(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    return tuple(h.strip() for h in first.split(",")) == META_HEADER


def load_recordings(path):
    """Load one CSV or every recording CSV in a directory, in filename order."""
    path = Path(path)
    if path.is_file():
        return [read_recording(path)]
    if not path.is_dir():
        raise IngestionError("no such file or directory", path)
    files = [p for p in sorted(path.glob("*.csv")) if _is_recording_file(p)]
    return [read_recording(p) for p in files]


def format_recording(rec):
    buf = io.StringIO()
    buf.write(",".join(META_HEADER) + "\n")
    rate = f"{rec.sample_rate_hz:g}"
    buf.write(f"{rec.patient_id},{rec.phase},{rec.activity},{rec.placement},{rate}\n")
    buf.write(",".join(SAMPLE_HEADER) + "\n")
    table = np.column_stack([rec.timestamps, rec.samples])
    np.savetxt(buf, table, fmt="%.6f", delimiter=",", newline="\n")
    return buf.getvalue()


def write_recording(rec, path):
    Path(path).write_bytes(format_recording(rec).encode("utf-8"))


# preprocessing --------------------------------------------------------------

def trim(rec, trim_s=2.5):
    """Drop ``round(trim_s * rate)`` samples from both ends."""
    cut = int(round(trim_s * rec.sample_rate_hz))
    if len(rec.samples) <= 2 * cut:
        raise PreprocessingError(
            f"recording of {len(rec.samples)} samples is too short to trim "
            f"{cut} from each end"
        )
    end = len(rec.samples) - cut
    return replace(rec, samples=rec.samples[cut:end], timestamps=rec.timestamps[cut:end])


def segment(rec, window=100, step=50, label=0):
    """Sliding windows starting at 0, step, 2*step, ...; the tail is dropped."""
    if window < 1 or not 1 <= step <= window:
        raise ContractError("need window >= 1 and 1 <= step <= window")
    n = len(rec.samples)
    if n < window:
        log.info("recording %s shorter than one window (%d < %d)", rec.patient_id, n, window)
        return []
    count = (n - window) // step + 1
    out = []
    for i in range(count):
        start = i * step
        source = (rec.patient_id, rec.phase, rec.activity, rec.placement, rec.trial, start)
        out.append(Window(rec.samples[start : start + window], label, source))
    return out


def expected_window_count(duration_s, rate_hz, trim_s=2.5, window=100, step=50):
    """Closed-form number of windows produced by trim + segment."""
    remaining = int(round(duration_s * rate_hz)) - 2 * int(round(trim_s * rate_hz))
    if remaining < window:
        return 0
    return (remaining - window) // step + 1


def build_windows(recordings, class_names=ACTIVITIES, trim_s=2.5, window=100, step=50):
    """Trim and segment recordings into one unnormalized WindowSet.

    Too-short recordings are skipped with a warning.  Window order follows
    recording order, then start index.
    """
    index = {name: i for i, name in enumerate(class_names)}
    windows = []
    for rec in recordings:
        try:
            trimmed = trim(rec, trim_s)
        except PreprocessingError as exc:
            log.warning("skipping %s/%s/%s trial %d: %s",
                        rec.patient_id, rec.phase, rec.activity, rec.trial, exc)
            continue
        windows.extend(segment(trimmed, window, step, index[rec.activity]))
    ws = WindowSet.from_windows(windows, class_names)
    if not windows:
        ws.values = np.zeros((0, window, len(CHANNELS)))
    return ws


def fit_norm_stats(train, floor=1e-8):
    if train.normalized:
        raise ContractError("fit_norm_stats needs unnormalized windows")
    if len(train) == 0:
        raise ContractError("cannot fit normalisation stats on an empty set")
    flat = train.values.reshape(-1, train.values.shape[-1])
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), floor)
    return NormStats(mean, std)


def apply_norm(ws, stats):
    if ws.normalized:
        raise ContractError("window set is already normalized")
    values = (ws.values - stats.mean) / stats.std
    return replace(ws, values=values, normalized=True, norm_stats=stats)


# partitions -----------------------------------------------------------------

def _group_key(source):
    return source[:5]  # (patient, phase, activity, placement, trial)


def stratified_split(ws, train_frac=0.8, seed=42, by="window"):
    """Per-class shuffled split; ``by="trial"`` keeps each trial on one side."""
    if not 0.0 < train_frac < 1.0:
        raise ContractError("train_frac must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for c, name in enumerate(ws.class_names):
        members = np.flatnonzero(ws.labels == c)
        if len(members) == 0:
            continue
        if by == "window":
            units = [[int(i)] for i in members]
        elif by == "trial":
            groups = {}
            for i in members:
                groups.setdefault(_group_key(ws.sources[i]), []).append(int(i))
            units = [groups[k] for k in sorted(groups)]
        else:
            raise ContractError(f"unknown split granularity {by!r}")
        if len(units) < 2:
            raise SplitError(f"class {name!r} has fewer than 2 {by}s; cannot split")
        order = rng.permutation(len(units))
        n_train = int(math.floor(train_frac * len(units) + 0.5))
        n_train = min(max(n_train, 1), len(units) - 1)
        for rank, u in enumerate(order):
            (train_idx if rank < n_train else val_idx).extend(units[u])
    return ws.subset(sorted(train_idx)), ws.subset(sorted(val_idx))


def kfold(ws, k=5, seed=42):
    """Stratified k-fold partitions as a list of ``(train, val)`` pairs."""
    if k < 2:
        raise ContractError("k must be at least 2")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for c, name in enumerate(ws.class_names):
        members = np.flatnonzero(ws.labels == c)
        if len(members) == 0:
            continue
        if len(members) < k:
            raise SplitError(f"class {name!r} has {len(members)} windows, fewer than k={k}")
        shuffled = members[rng.permutation(len(members))]
        for f, chunk in enumerate(np.array_split(shuffled, k)):
            folds[f].extend(int(i) for i in chunk)
    everything = np.arange(len(ws))
    pairs = []
    for f in range(k):
        val = np.array(sorted(folds[f]), dtype=np.int64)
        train = np.setdiff1d(everything, val)
        pairs.append((ws.subset(train), ws.subset(val)))
    return pairs


# cache ----------------------------------------------------------------------

def save_windows(ws, path):
    meta = {
        "kind": "windowset",
        "version": WINDOW_CACHE_VERSION,
        "class_names": list(ws.class_names),
        "normalized": ws.normalized,
        "sources": [list(s) for s in ws.sources],
    }
    arrays = {"values": ws.values, "labels": ws.labels.astype(np.float64)}
    if ws.norm_stats is not None:
        arrays["norm_mean"] = ws.norm_stats.mean
        arrays["norm_std"] = ws.norm_stats.std
    binio.write(path, meta, arrays)


def load_windows(path):
    meta, arrays = binio.read(path)
    if meta.get("kind") != "windowset" or meta.get("version") != WINDOW_CACHE_VERSION:
        raise IngestionError("not a window cache of a supported version", path)
    stats = None
    if "norm_mean" in arrays:
        stats = NormStats(arrays["norm_mean"], arrays["norm_std"])
    return WindowSet(
        arrays["values"],
        arrays["labels"].astype(np.int64),
        [tuple(s) for s in meta["sources"]],
        tuple(meta["class_names"]),
        meta["normalized"],
        stats,
    )


def read_nrs_table(path):
    """Parse ``nrs.csv`` into ``{patient_id: (nrs_pre, nrs_post)}``."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or tuple(h.strip() for h in lines[0].split(",")) != ("patient_id", "nrs_pre", "nrs_post"):
        raise IngestionError("header must be patient_id,nrs_pre,nrs_post", path, 1)
    table = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 3:
            raise IngestionError("expected 3 columns", path, lineno)
        try:
            pre, post = int(fields[1]), int(fields[2])
        except ValueError:
            raise IngestionError("NRS values must be integers", path, lineno) from None
        if not (0 <= pre <= 10 and 0 <= post <= 10):
            raise IngestionError("NRS values must lie in 0..10", path, lineno)
        table[fields[0]] = (pre, post)
    return table

