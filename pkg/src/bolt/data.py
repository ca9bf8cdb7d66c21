"""Channel time series: file formats, z-scoring, cropping and a synthetic generator."""

from __future__ import annotations

import csv
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ParseError(ValueError):
    def __init__(self, msg: str, path=None, row: int | None = None, col: int | None = None):
        where = ""
        if row is not None:
            where = f" (row {row}" + (f", column {col}" if col is not None else "") + ")"
        super().__init__(f"{path or '<input>'}: {msg}{where}")
        self.row, self.col = row, col


class ZeroVarianceError(ValueError):
    pass


@dataclass
class RoiTimeSeries:
    values: np.ndarray  # (T, N)
    label: int = -1
    meta: dict = field(default_factory=dict)
    # planted ``[start, end)`` intervals, synthetic data only
    events: list[tuple[int, int]] = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]


# --- file formats ---------------------------------------------------------

MAGIC = b"ROIS"
VERSION = 1
_HEADER = struct.Struct("<4sHIIi")


def save_series(path: str | Path, series: RoiTimeSeries) -> None:
    """Binary container: magic, version, T, N, label, row-major float32 LE."""
    v = np.ascontiguousarray(series.values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, v.shape[0], v.shape[1], int(series.label)))
        f.write(v.tobytes())


def _load_binary(path: Path) -> RoiTimeSeries:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError("truncated header", path)
    magic, version, T, N, label = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ParseError("bad magic bytes", path)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", path)
    body = raw[_HEADER.size :]
    if len(body) != 4 * T * N:
        raise ParseError(f"expected {T}x{N} float32 values, found {len(body)} bytes", path)
    values = np.frombuffer(body, dtype="<f4").reshape(T, N).astype(np.float32)
    return RoiTimeSeries(values, label, {"id": path.stem})


def _load_text(path: Path) -> RoiTimeSeries:
    rows = []
    width = None
    with open(path, newline="") as f:
        for r, line in enumerate(f, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cells = [c for c in re.split(r"[,\t; ]+", line.strip()) if c != ""]
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ParseError(f"ragged row with {len(cells)} columns, expected {width}", path, r)
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                bad = next(i for i, c in enumerate(cells, start=1) if not _is_float(c))
                raise ParseError(f"non-numeric cell {cells[bad - 1]!r}", path, r, bad) from None
    if not rows:
        raise ParseError("empty file", path)
    m = re.search(r"_label(\d+)$", path.stem)
    return RoiTimeSeries(np.asarray(rows, dtype=np.float64), int(m.group(1)) if m else -1, {"id": path.stem})


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_series(path: str | Path) -> RoiTimeSeries:
    """Read a delimited-text (rows = time) or binary ``.rois`` series, un-normalised.

    Labels come from the binary header, a ``labels.csv`` sidecar next to the
    file, or a ``_label<k>`` filename suffix, in that order of precedence.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, "rb") as f:
        is_binary = f.read(4) == MAGIC
    series = _load_binary(path) if is_binary else _load_text(path)
    sidecar = path.parent / "labels.csv"
    if series.label < 0 and sidecar.exists():
        series.label = read_labels(sidecar).get(path.stem, -1)
    return series


def read_labels(path: str | Path) -> dict[str, int]:
    out = {}
    with open(path, newline="") as f:
        for r, row in enumerate(csv.reader(f), start=1):
            if not row or row[0].startswith("#") or row[0] == "scan_id":
                continue
            if len(row) != 2:
                raise ParseError("label rows need exactly scan_id,label", path, r)
            try:
                out[row[0]] = int(row[1])
            except ValueError:
                raise ParseError(f"non-integer label {row[1]!r}", path, r, 2) from None
    return out


def write_labels(path: str | Path, labels: dict[str, int]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scan_id", "label"])
        for k in sorted(labels):
            w.writerow([k, labels[k]])


def load_dataset(directory: str | Path) -> list[RoiTimeSeries]:
    """All ``.rois``/``.csv``/``.txt`` series in ``directory`` (except ``labels.csv``), z-scored."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(directory)
    labels = read_labels(directory / "labels.csv") if (directory / "labels.csv").exists() else {}
    out = []
    for p in sorted(directory.iterdir()):
        if p.name == "labels.csv" or p.suffix not in (".rois", ".csv", ".txt"):
            continue
        s = load_series(p)
        if p.stem in labels:
            s.label = labels[p.stem]
        if s.label < 0:
            raise ParseError("no label in header, sidecar or filename", p)
        out.append(zscore(s))
    if not out:
        raise ParseError("no series files found", directory)
    return out


def save_dataset(directory: str | Path, dataset: list[RoiTimeSeries]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    labels = {}
    for k, s in enumerate(dataset):
        sid = s.meta.get("id", f"scan{k:05d}")
        save_series(directory / f"{sid}.rois", s)
        labels[sid] = s.label
    write_labels(directory / "labels.csv", labels)


# --- preprocessing --------------------------------------------------------


def zscore(series: RoiTimeSeries) -> RoiTimeSeries:
    """Per-channel standardisation with the population variance."""
    x = np.asarray(series.values, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    flat = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(mu)))
    if flat.size:
        raise ZeroVarianceError(f"channels {flat.tolist()} are constant over the whole series")
    return RoiTimeSeries((x - mu) / sd, series.label, dict(series.meta), list(series.events))


def random_crop(series: RoiTimeSeries, length: int, rng: np.random.Generator | None) -> RoiTimeSeries:
    """Contiguous crop at a uniform onset; ``rng=None`` (eval) keeps the full series.

    Event intervals are shifted into crop coordinates and clipped.
    """
    T = series.T
    if length > T:
        raise ValueError(f"crop length {length} exceeds series length {T}")
    if rng is None:
        return series
    onset = int(rng.integers(0, T - length + 1))
    events = []
    for a, b in series.events:
        a2, b2 = max(a - onset, 0), min(b - onset, length)
        if a2 < b2:
            events.append((a2, b2))
    meta = dict(series.meta, crop_onset=onset)
    return RoiTimeSeries(series.values[onset : onset + length], series.label, meta, events)


# --- synthetic data -------------------------------------------------------


@dataclass
class EventType:
    loading: np.ndarray  # (N,) channel pattern while the event is on
    duration: int


@dataclass
class SynthSpec:
    """Per-class event schedules rendered as boxcars over channel loadings.

    Each sample of class ``c`` contains every event of ``schedules[c]`` once,
    at non-overlapping uniformly random onsets separated by at least ``gap``.
    """

    T: int
    N: int
    schedules: list[list[EventType]]
    noise: float = 1.0
    smooth: int = 1
    gap: int = 4
    standardize: bool = True

    def __post_init__(self):
        if len(self.schedules) < 2:
            raise ValueError("need at least two classes")
        for c, sched in enumerate(self.schedules):
            for ev in sched:
                if np.shape(ev.loading) != (self.N,):
                    raise ValueError(f"class {c}: loading must have {self.N} entries")
                if not 1 <= ev.duration <= self.T:
                    raise ValueError(f"class {c}: event duration {ev.duration} outside [1, T]")
            if self._span(sched) > self.T:
                raise ValueError(f"class {c}: events do not fit in T={self.T}")
        sigs = [self._signature(s) for s in self.schedules]
        if len({*sigs}) != len(sigs):
            raise ValueError("loading patterns must differ across classes")

    @property
    def num_classes(self) -> int:
        return len(self.schedules)

    def kernel(self) -> np.ndarray:
        k = np.bartlett(self.smooth + 2)[1:-1]
        return k / k.sum()

    def _span(self, sched) -> int:
        tail = self.smooth - 1
        return sum(ev.duration + tail for ev in sched) + self.gap * max(len(sched) - 1, 0)

    @staticmethod
    def _signature(sched):
        return tuple(sorted((tuple(np.round(ev.loading, 9)), ev.duration) for ev in sched))


def _place(spec: SynthSpec, sched, rng: np.random.Generator) -> list[int]:
    """Random non-overlapping onsets (in schedule order) via slack distribution."""
    tail = spec.smooth - 1
    lengths = [ev.duration + tail for ev in sched]
    slack = spec.T - spec._span(sched)
    # stars and bars: sorted cut points split the slack into leading gaps
    cuts = np.sort(rng.integers(0, slack + 1, size=len(sched)))
    lead = np.diff(cuts, prepend=0)
    onsets = [0] * len(sched)
    pos = 0
    for g, j in zip(lead, rng.permutation(len(sched))):
        pos += int(g)
        onsets[j] = pos
        pos += lengths[j] + spec.gap
    return onsets


def render(spec: SynthSpec, label: int, onsets: list[int]) -> np.ndarray:
    """Noise-free signal ``(T, N)`` for a class and its event onsets."""
    x = np.zeros((spec.T, spec.N))
    for ev, t0 in zip(spec.schedules[label], onsets):
        x[t0 : t0 + ev.duration] += ev.loading
    k = spec.kernel()
    if len(k) > 1:
        # causal smoothing; the response trails each event by len(k) - 1 steps
        x = np.stack([np.convolve(x[:, j], k)[: spec.T] for j in range(spec.N)], axis=1)
    return x


def synth_generate(spec: SynthSpec, n_samples: int, rng: np.random.Generator) -> list[RoiTimeSeries]:
    """Draw classes uniformly, plant their events, smooth, add white noise, z-score.

    ``events`` on each sample are the observed response intervals, i.e. the
    boxcar extended by the smoothing tail.
    """
    out = []
    tail = spec.smooth - 1
    for n in range(n_samples):
        label = int(rng.integers(0, spec.num_classes))
        sched = spec.schedules[label]
        onsets = _place(spec, sched, rng)
        x = render(spec, label, onsets)
        if spec.noise > 0:
            x = x + spec.noise * rng.standard_normal(x.shape)
        events = sorted((t0, min(t0 + ev.duration + tail, spec.T)) for ev, t0 in zip(sched, onsets))
        s = RoiTimeSeries(x, label, {"id": f"scan{n:05d}"}, events)
        out.append(zscore(s) if spec.standardize else s)
    return out


def planted_sync_spec(T: int = 60, N: int = 16, amplitude: float = 2.0, duration: int = 6,
                      noise: float = 1.0, smooth: int = 3, group: int = 4) -> SynthSpec:
    """Two-class synchrony task with identical per-channel marginals.

    Class 0: channel groups A and B switch on together in one event.
    Class 1: A and B switch on in two separate events.
    Every channel carries exactly one event of the same size in both classes,
    so the class is only visible where the events are.
    """
    a = np.zeros(N)
    b = np.zeros(N)
    a[:group] = amplitude
    b[group : 2 * group] = amplitude
    return SynthSpec(
        T=T,
        N=N,
        schedules=[
            [EventType(a + b, duration)],
            [EventType(a, duration), EventType(b, duration)],
        ],
        noise=noise,
        smooth=smooth,
    )


def orthogonal_spec(T: int = 60, N: int = 16, amplitude: float = 1.0, duration: int = 10,
                    noise: float = 0.05, smooth: int = 1, standardize: bool = False) -> SynthSpec:
    """Two classes whose single event loads disjoint channel halves."""
    a = np.zeros(N)
    b = np.zeros(N)
    a[: N // 2] = amplitude
    b[N // 2 :] = amplitude
    return SynthSpec(T, N, [[EventType(a, duration)], [EventType(b, duration)]],
                     noise=noise, smooth=smooth, standardize=standardize)
