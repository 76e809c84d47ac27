"""Yahoo-A1-style CSV ingestion and a labelled synthetic traffic generator.

On disk a corpus is a directory of per-series CSV files with the header
``timestamp,value,is_anomaly[,anomaly_type]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core.init import spawn
from .errors import ConfigError, ContractError, IntegrityError, ParseError

ANOMALY_TYPES = ("point", "contextual", "collective")
# compact per-point type codes used by windowing and the window cache
TYPE_CODES = {None: 1, "point": 2, "contextual": 3, "collective": 4}
CODE_TYPES = {code: name for name, code in TYPE_CODES.items()}
REQUIRED_COLUMNS = ("timestamp", "value", "is_anomaly")


@dataclass(frozen=True)
class DataPoint:
    timestamp: int
    value: float
    is_anomaly: bool
    anomaly_type: str | None = None

    def __post_init__(self):
        if self.anomaly_type is not None:
            if self.anomaly_type not in ANOMALY_TYPES:
                raise ContractError(f"unknown anomaly type {self.anomaly_type!r}")
            if not self.is_anomaly:
                raise ContractError("anomaly_type set on a point not flagged anomalous")


@dataclass
class TimeSeriesFile:
    file_id: str
    points: list

    def __len__(self):
        return len(self.points)

    def validate(self):
        if not self.points:
            raise IntegrityError(f"{self.file_id}: series has no data points")
        prev = None
        for i, p in enumerate(self.points):
            if prev is not None and p.timestamp <= prev:
                raise IntegrityError(
                    f"{self.file_id}: timestamp {p.timestamp} at point {i} not after {prev}"
                )
            prev = p.timestamp
        return self

    @property
    def values(self):
        return np.array([p.value for p in self.points], dtype=np.float64)

    @property
    def flags(self):
        return np.array([p.is_anomaly for p in self.points], dtype=bool)

    @property
    def type_codes(self):
        """0 for normal points, otherwise the :data:`TYPE_CODES` entry."""
        return np.array(
            [TYPE_CODES[p.anomaly_type] if p.is_anomaly else 0 for p in self.points],
            dtype=np.uint8,
        )

    @property
    def typed(self):
        return any(p.anomaly_type is not None for p in self.points)


# CSV ----------------------------------------------------------------------

def load_yahoo_csv(path):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("missing header line", path, 1) from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"header lacks column(s) {', '.join(missing)}", path, 1)
        col = {name: header.index(name) for name in header}
        type_col = col.get("anomaly_type")

        points = []
        prev = None
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, line)
            try:
                ts = int(row[col["timestamp"]])
            except ValueError:
                raise ParseError(f"non-integer timestamp {row[col['timestamp']]!r}", path, line) from None
            try:
                value = float(row[col["value"]])
            except ValueError:
                raise ParseError(f"non-numeric value {row[col['value']]!r}", path, line) from None
            if not math.isfinite(value):
                raise ParseError(f"non-finite value {row[col['value']]!r}", path, line)
            flag = row[col["is_anomaly"]].strip()
            if flag not in ("0", "1"):
                raise ParseError(f"is_anomaly must be 0 or 1, got {flag!r}", path, line)
            kind = None
            if type_col is not None:
                kind = row[type_col].strip() or None
                if kind is not None and kind not in ANOMALY_TYPES:
                    raise ParseError(f"unknown anomaly_type {kind!r}", path, line)
                if kind is not None and flag != "1":
                    raise ParseError("anomaly_type given for a normal point", path, line)
            if prev is not None and ts <= prev:
                raise IntegrityError(f"{path}:{line}: timestamp {ts} not after {prev}")
            prev = ts
            points.append(DataPoint(ts, value, flag == "1", kind))

    if not points:
        raise IntegrityError(f"{path}: no data rows")
    return TimeSeriesFile(path.stem, points)


def write_csv(series, path):
    """Write ``series``; the anomaly_type column appears only for typed series."""
    typed = series.typed
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REQUIRED_COLUMNS + (("anomaly_type",) if typed else ()))
        for p in series.points:
            row = [p.timestamp, repr(float(p.value)), int(p.is_anomaly)]
            if typed:
                row.append(p.anomaly_type or "")
            writer.writerow(row)


def load_corpus(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise IntegrityError(f"{directory}: not a directory")
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise IntegrityError(f"{directory}: no .csv files")
    return [load_yahoo_csv(p) for p in paths]


def write_corpus(files, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in files:
        path = directory / f"{f.file_id}.csv"
        write_csv(f, path)
        paths.append(path)
    return paths


# synthetic generator ---------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Parameters of the synthetic corpus.

    Rates are fractions of points.  Magnitudes are multiples of the noise
    standard deviation.  ``collective_length`` is an inclusive (min, max) run length.
    """

    num_files: int = 67
    points_per_file: int = 1500
    seed: int = 0
    level: float = 100.0
    amplitude: float = 40.0
    period: int = 24
    noise_std: float = 1.5
    point_rate: float = 0.004
    contextual_rate: float = 0.004
    collective_rate: float = 0.012
    collective_length: tuple = (8, 24)
    point_magnitude: float = 6.0
    contextual_magnitude: float = 6.0
    window_length: int = 60

    def __post_init__(self):
        self.collective_length = tuple(int(n) for n in self.collective_length)

    @property
    def total_rate(self):
        return self.point_rate + self.contextual_rate + self.collective_rate

    def validate(self):
        rates = (self.point_rate, self.contextual_rate, self.collective_rate)
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ConfigError(f"anomaly rates must lie in [0, 1], got {rates}")
        if self.total_rate > 0.2 + 1e-12:
            raise ConfigError(f"anomaly rates sum to {self.total_rate:.4f} > 0.2")
        if self.num_files < 1:
            raise ConfigError("num_files must be >= 1")
        if self.points_per_file < 2 * self.window_length:
            raise ConfigError(
                f"points_per_file {self.points_per_file} < 2 x window length {self.window_length}"
            )
        lo, hi = self.collective_length
        if len(self.collective_length) != 2 or not 1 <= lo <= hi:
            raise ConfigError(f"collective_length must be (min, max) with 1 <= min <= max")
        if self.noise_std <= 0 or self.period < 2:
            raise ConfigError("noise_std must be > 0 and period >= 2")
        if self.point_magnitude < 6.0 or self.contextual_magnitude < 4.0:
            raise ConfigError("point_magnitude must be >= 6 and contextual_magnitude >= 4 (noise sigmas)")
        return self

    def to_dict(self):
        d = asdict(self)
        d["collective_length"] = list(self.collective_length)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {', '.join(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Injection:
    file_id: str
    kind: str
    start: int
    length: int


# keeps neighbours of an injected anomaly clean so its context stays readable
_GAP = 3


def _place(rng, occupied, length, tries=200):
    n = len(occupied)
    for _ in range(tries):
        start = int(rng.integers(0, n - length + 1))
        lo, hi = max(0, start - _GAP), min(n, start + length + _GAP)
        if not occupied[lo:hi].any():
            occupied[start : start + length] = True
            return start
    return None


def _synthesize_file(spec, rng, file_id):
    n = spec.points_per_file
    t = np.arange(n)
    scale = rng.uniform(0.8, 1.2)
    level, amp, sigma = spec.level * scale, spec.amplitude * scale, spec.noise_std * scale
    phase = rng.uniform(0.0, 2.0 * np.pi)
    omega = 2.0 * np.pi / spec.period
    expected = level + amp * np.sin(omega * t + phase)
    values = expected + rng.normal(0.0, sigma, size=n)
    kinds = [None] * n
    occupied = np.zeros(n, dtype=bool)
    events = []

    lo_len, hi_len = spec.collective_length
    mean_len = 0.5 * (lo_len + hi_len)
    n_runs = rng.binomial(n, min(1.0, spec.collective_rate / mean_len))
    for _ in range(n_runs):
        length = int(rng.integers(lo_len, hi_len + 1))
        start = _place(rng, occupied, length)
        if start is None:
            continue
        seg = slice(start, start + length)
        if rng.random() < 0.5:
            # flatline: hold the level reached at the run start, with damped noise
            values[seg] = expected[start] + rng.normal(0.0, 0.3 * sigma, size=length)
        else:
            # half-period phase shift of the daily cycle
            values[seg] = (level + amp * np.sin(omega * t[seg] + phase + np.pi)
                           + rng.normal(0.0, sigma, size=length))
        for i in range(start, start + length):
            kinds[i] = "collective"
        events.append(Injection(file_id, "collective", start, length))

    for _ in range(rng.binomial(n, spec.contextual_rate)):
        i = _place(rng, occupied, 1)
        if i is None:
            continue
        toward_level = -np.sign(expected[i] - level) or (1.0 if rng.random() < 0.5 else -1.0)
        shift = rng.uniform(spec.contextual_magnitude, spec.contextual_magnitude + 2.0) * sigma
        values[i] = expected[i] + toward_level * shift
        kinds[i] = "contextual"
        events.append(Injection(file_id, "contextual", i, 1))

    for _ in range(rng.binomial(n, spec.point_rate)):
        i = _place(rng, occupied, 1)
        if i is None:
            continue
        jump = rng.uniform(spec.point_magnitude, spec.point_magnitude + 4.0) * sigma
        # spikes leave the normal envelope entirely, mostly upwards (surges)
        if rng.random() < 0.75:
            values[i] = max(expected[i], level + amp) + jump
        else:
            values[i] = min(expected[i], level - amp) - jump
        kinds[i] = "point"
        events.append(Injection(file_id, "point", i, 1))

    points = [
        DataPoint(int(ts), float(v), k is not None, k)
        for ts, v, k in zip(t + 1, values, kinds)
    ]
    events.sort(key=lambda e: e.start)
    return TimeSeriesFile(file_id, points), events


def synthesize(spec):
    """Generate the corpus and the list of :class:`Injection` events behind it."""
    spec.validate()
    files, events = [], []
    width = len(str(spec.num_files))
    for i, rng in enumerate(spawn(spec.seed, spec.num_files), start=1):
        f, ev = _synthesize_file(spec, rng, f"synthetic_{i:0{width}d}")
        files.append(f)
        events.extend(ev)
    return files, events


def generate_synthetic(spec):
    return synthesize(spec)[0]


@dataclass
class DatasetStats:
    num_files: int
    total_points: int
    anomalous_points: int
    anomalous_fraction: float
    by_type: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def dataset_stats(files):
    if not files:
        raise ContractError("dataset_stats needs at least one file")
    total = anomalous = 0
    by_type = {}
    for f in files:
        for p in f.points:
            total += 1
            if p.is_anomaly:
                anomalous += 1
                if p.anomaly_type is not None:
                    by_type[p.anomaly_type] = by_type.get(p.anomaly_type, 0) + 1
    return DatasetStats(len(files), total, anomalous, anomalous / total, dict(sorted(by_type.items())))
