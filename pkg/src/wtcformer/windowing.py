"""Sliding windows, per-file min-max normalisation, labelling and data splits."""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core.init import make_rng
from .dataset import CODE_TYPES
from .errors import ConfigError, ContractError, IntegrityError


@dataclass
class WindowConfig:
    w: int = 60
    s: int = 1
    # a window is anomalous when it holds at least this many flagged points
    min_anomalous_points: int = 1

    def validate(self):
        if self.w < 1 or self.s < 1:
            raise ConfigError(f"window w and s must be >= 1, got w={self.w} s={self.s}")
        if self.min_anomalous_points < 1:
            raise ConfigError("window.min_anomalous_points must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = sorted(set(data or {}) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown window keys: {', '.join(unknown)}")
        return cls(**(data or {}))


@dataclass(frozen=True)
class NormalizationParams:
    x_min: float
    x_max: float

    def __post_init__(self):
        if self.x_min > self.x_max:
            raise ContractError(f"x_min {self.x_min} > x_max {self.x_max}")

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(float(values.min()), float(values.max()))


@dataclass
class WindowSample:
    file_id: str
    start_index: int  # 1-based position of the first point in its file
    values: np.ndarray
    label: bool
    anomaly_positions: tuple = ()
    anomaly_types: tuple | None = None

    def __eq__(self, other):
        if not isinstance(other, WindowSample):
            return NotImplemented
        return (
            self.file_id == other.file_id
            and self.start_index == other.start_index
            and self.label == other.label
            and self.anomaly_positions == other.anomaly_positions
            and self.anomaly_types == other.anomaly_types
            and np.array_equal(self.values, other.values)
        )


def window_count(n, w, s=1):
    """Number of length-``w`` windows at step ``s`` in a length-``n`` series (0 if n < w)."""
    if w < 1 or s < 1:
        raise ContractError(f"window_count needs w >= 1 and s >= 1, got w={w} s={s}")
    if n < w:
        return 0
    return (n - w) // s + 1


def normalize_window(values, params):
    """Min-max scale into [0, 1]; a constant range maps everything to 0."""
    values = np.asarray(values, dtype=np.float64)
    span = params.x_max - params.x_min
    if span == 0:
        return np.zeros_like(values)
    return np.clip((values - params.x_min) / span, 0.0, 1.0)


def _windows(file_id, values, codes, typed, cfg):
    n, w = len(values), cfg.w
    k = window_count(n, w, cfg.s)
    if k == 0:
        warnings.warn(f"{file_id}: series length {n} shorter than window {w}; no windows",
                      stacklevel=3)
        return []
    vals = sliding_window_view(values, w)[:: cfg.s][:k]
    marks = sliding_window_view(codes, w)[:: cfg.s][:k]
    out = []
    for j in range(k):
        pos = np.flatnonzero(marks[j])
        types = None
        if typed:
            types = tuple(CODE_TYPES[int(c)] for c in marks[j][pos])
        out.append(WindowSample(
            file_id=file_id,
            start_index=j * cfg.s + 1,
            values=vals[j].copy(),
            label=len(pos) >= cfg.min_anomalous_points,
            anomaly_positions=tuple(int(p) for p in pos),
            anomaly_types=types,
        ))
    return out


def slide(series, cfg):
    """Raw (unnormalised) windows of one file, in start order."""
    cfg.validate()
    return _windows(series.file_id, series.values, series.type_codes, series.typed, cfg)


def build_corpus(files, cfg):
    """Normalise each file by its own min/max, then window and label it.

    Scaling the whole file before sliding gives exactly the same windows as
    scaling each window with the file's parameters.
    """
    cfg.validate()
    samples = []
    for f in files:
        values = f.values
        scaled = normalize_window(values, NormalizationParams.of(values))
        samples.extend(_windows(f.file_id, scaled, f.type_codes, f.typed, cfg))
    return samples


def stack_windows(samples):
    """``(X [N, w], y [N])`` arrays for training."""
    if not samples:
        return np.zeros((0, 0)), np.zeros(0)
    x = np.stack([s.values for s in samples])
    y = np.fromiter((s.label for s in samples), dtype=np.float64, count=len(samples))
    return x, y


# splits -------------------------------------------------------------------

@dataclass
class SplitSpec:
    mode: str = "holdout"  # "holdout" or "kfold"
    ratio: float = 0.7
    k: int = 10
    seed: int = 0

    def validate(self):
        if self.mode == "holdout":
            if not 0.0 < self.ratio < 1.0:
                raise ConfigError(f"split.ratio must be in (0, 1), got {self.ratio}")
        elif self.mode == "kfold":
            if self.k < 2:
                raise ConfigError(f"split.k must be >= 2, got {self.k}")
        else:
            raise ConfigError(f"split.mode must be 'holdout' or 'kfold', got {self.mode!r}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = sorted(set(data or {}) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown split keys: {', '.join(unknown)}")
        return cls(**(data or {}))


def holdout_size(n, ratio):
    return int(math.floor(ratio * n + 0.5))


def split_indices(n, spec):
    """Index partition: ``(train, test)`` for holdout, a list of k folds for kfold."""
    spec.validate()
    if n < 2:
        raise ContractError(f"split needs at least 2 samples, got {n}")
    order = make_rng(spec.seed).permutation(n)
    if spec.mode == "holdout":
        cut = holdout_size(n, spec.ratio)
        return order[:cut], order[cut:]
    if spec.k > n:
        raise ContractError(f"cannot make {spec.k} folds from {n} samples")
    return np.array_split(order, spec.k)


def split(samples, spec):
    parts = split_indices(len(samples), spec)
    if spec.mode == "holdout":
        train, test = parts
        return [samples[i] for i in train], [samples[i] for i in test]
    return [[samples[i] for i in fold] for fold in parts]


# binary window cache ------------------------------------------------------
#
# magic(8) | version u32 | w u32 | s u32 | count u64 | file-id count u32
# | file ids (u16 length + utf-8 each) | typed u8 | count fixed-size records:
#   file index u32, start index u32, label u8, values f64[w], point codes u8[w]

CACHE_MAGIC = b"WTCFWIN\x00"
CACHE_VERSION = 1


def save_window_cache(samples, cfg, path):
    file_ids = list(dict.fromkeys(s.file_id for s in samples))
    index = {fid: i for i, fid in enumerate(file_ids)}
    typed = any(s.anomaly_types is not None for s in samples)
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IIIQI", CACHE_VERSION, cfg.w, cfg.s, len(samples), len(file_ids)))
        for fid in file_ids:
            raw = fid.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(struct.pack("<B", int(typed)))
        rev = {name: code for code, name in CODE_TYPES.items()}
        for s in samples:
            codes = np.zeros(cfg.w, dtype=np.uint8)
            for k, p in enumerate(s.anomaly_positions):
                codes[p] = rev[s.anomaly_types[k]] if s.anomaly_types else 1
            fh.write(struct.pack("<IIB", index[s.file_id], s.start_index, int(s.label)))
            fh.write(np.asarray(s.values, dtype="<f8").tobytes())
            fh.write(codes.tobytes())


def load_window_cache(path):
    """Returns ``(samples, w, s)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CACHE_MAGIC:
        raise IntegrityError(f"{path}: not a window cache (bad magic)")
    version, w, s, count, n_ids = struct.unpack_from("<IIIQI", data, 8)
    if version != CACHE_VERSION:
        raise IntegrityError(f"{path}: unsupported window cache version {version}")
    off = 8 + struct.calcsize("<IIIQI")
    file_ids = []
    for _ in range(n_ids):
        (ln,) = struct.unpack_from("<H", data, off)
        file_ids.append(data[off + 2 : off + 2 + ln].decode())
        off += 2 + ln
    typed = bool(data[off])
    off += 1
    rec = struct.calcsize("<IIB") + 8 * w + w
    if len(data) - off != rec * count:
        raise IntegrityError(f"{path}: expected {count} records of {rec} bytes")
    samples = []
    for _ in range(count):
        fidx, start, label = struct.unpack_from("<IIB", data, off)
        off += struct.calcsize("<IIB")
        values = np.frombuffer(data, dtype="<f8", count=w, offset=off).astype(np.float64)
        off += 8 * w
        codes = np.frombuffer(data, dtype=np.uint8, count=w, offset=off)
        off += w
        pos = np.flatnonzero(codes)
        samples.append(WindowSample(
            file_id=file_ids[fidx],
            start_index=start,
            values=values,
            label=bool(label),
            anomaly_positions=tuple(int(p) for p in pos),
            anomaly_types=tuple(CODE_TYPES[int(c)] for c in codes[pos]) if typed else None,
        ))
    return samples, w, s
