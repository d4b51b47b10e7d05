"""Loading, resampling, normalizing and windowing ECG records."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

BEAT_TYPES = ("N", "S", "V", "UNKNOWN")

_FS_COMMENT = re.compile(r"^\s*#\s*fs\s*=\s*([0-9.eE+-]+)\s*$")


@dataclass
class EcgRecord:
    record_id: str
    sampling_rate_hz: float
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.sampling_rate_hz <= 0:
            raise ConfigError(f"sampling rate must be positive, got {self.sampling_rate_hz}")
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise DataError(f"record {self.record_id!r} needs a non-empty 1D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"record {self.record_id!r} contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sampling_rate_hz


@dataclass
class RPeakAnnotations:
    peak_indices: np.ndarray
    beat_types: list = field(default_factory=list)

    def __post_init__(self):
        self.peak_indices = np.asarray(self.peak_indices, dtype=np.int64).reshape(-1)
        if not self.beat_types:
            self.beat_types = ["UNKNOWN"] * self.peak_indices.size
        self.beat_types = list(self.beat_types)
        if len(self.beat_types) != self.peak_indices.size:
            raise DataError("beat_types and peak_indices differ in length")
        if np.any(np.diff(self.peak_indices) <= 0):
            raise FormatError("annotation indices must be strictly increasing")
        bad = set(self.beat_types) - set(BEAT_TYPES)
        if bad:
            raise FormatError(f"unknown beat types {sorted(bad)}")

    def __len__(self):
        return self.peak_indices.size

    def check_within(self, length: int) -> None:
        if self.peak_indices.size and (self.peak_indices[0] < 0 or self.peak_indices[-1] >= length):
            raise DataError(f"annotation index outside record of length {length}")


@dataclass
class SegmentView:
    record_id: str
    start_index: int
    samples: np.ndarray
    window_samples: int
    valid_length: int
    sampling_rate_hz: float = 400.0

    def replace_samples(self, samples) -> "SegmentView":
        return SegmentView(self.record_id, self.start_index, np.asarray(samples),
                           self.window_samples, self.valid_length, self.sampling_rate_hz)


# --------------------------------------------------------------------------- CSV


def read_signal_csv(path, fs: float | None = None, record_id: str | None = None) -> EcgRecord:
    """One amplitude per line; optional ``# fs=<hz>`` first line or a single text header.

    An explicit ``fs`` argument overrides the file comment.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    values = []
    file_fs = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if lineno == 1:
            m = _FS_COMMENT.match(line)
            if m:
                file_fs = float(m.group(1))
                continue
        if line.startswith("#"):
            continue
        try:
            value = float(line.split(",")[0])
        except ValueError:
            if lineno == 1 or (lineno == 2 and file_fs is not None and not values):
                continue  # header line
            raise FormatError(f"{path}:{lineno}: cannot parse {raw!r}") from None
        if not math.isfinite(value):
            raise FormatError(f"{path}:{lineno}: non-finite value {raw!r}")
        values.append(value)
    rate = fs if fs is not None else file_fs
    if rate is None:
        raise ConfigError(f"{path}: no sampling rate (pass fs or add '# fs=<hz>' on line 1)")
    if not values:
        raise FormatError(f"{path}: no samples")
    return EcgRecord(record_id or path.stem, float(rate), np.array(values))


def write_signal_csv(record: EcgRecord, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# fs={record.sampling_rate_hz:g}\n")
        fh.writelines(f"{v!r}\n" for v in record.samples.tolist())
    return path


def read_annotations_csv(path) -> RPeakAnnotations:
    """Rows of ``sample_index,beat_type``; a missing type becomes ``UNKNOWN``."""
    path = Path(path)
    indices, types = [], []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            idx = int(parts[0])
        except ValueError:
            if lineno == 1:
                continue  # header
            raise FormatError(f"{path}:{lineno}: bad sample index {parts[0]!r}") from None
        kind = parts[1] if len(parts) > 1 and parts[1] else "UNKNOWN"
        if kind not in BEAT_TYPES:
            raise FormatError(f"{path}:{lineno}: unknown beat type {kind!r}")
        if indices and idx <= indices[-1]:
            what = "duplicate" if idx == indices[-1] else "non-increasing"
            raise FormatError(f"{path}:{lineno}: {what} index {idx}")
        indices.append(idx)
        types.append(kind)
    return RPeakAnnotations(np.array(indices, dtype=np.int64), types)


def write_annotations_csv(ann: RPeakAnnotations, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for idx, kind in zip(ann.peak_indices.tolist(), ann.beat_types):
            fh.write(f"{idx}\n" if kind == "UNKNOWN" else f"{idx},{kind}\n")
    return path


# --------------------------------------------------------------------------- WFDB format 212


def decode_212(payload: bytes, n_channels: int = 2) -> np.ndarray:
    """Unpack 12-bit two's-complement pairs stored in 3 bytes.

    Returns ``(n_samples, n_channels)`` raw integers.
    """
    buf = np.frombuffer(payload, dtype=np.uint8)
    n_triples = buf.size // 3
    if buf.size % 3:
        raise FormatError(f"format-212 payload truncated at byte offset {n_triples * 3}")
    trip = buf[: n_triples * 3].reshape(-1, 3).astype(np.int32)
    first = trip[:, 0] | ((trip[:, 1] & 0x0F) << 8)
    second = trip[:, 2] | ((trip[:, 1] & 0xF0) << 4)
    raw = np.empty(2 * n_triples, dtype=np.int32)
    raw[0::2], raw[1::2] = first, second
    raw[raw >= 2048] -= 4096
    if raw.size % n_channels:
        raise FormatError(f"format-212 payload truncated at byte offset {buf.size}")
    return raw.reshape(-1, n_channels)


@dataclass
class WfdbSignalSpec:
    file_name: str
    fmt: str
    gain: float
    baseline: int
    description: str


def parse_wfdb_header(text: str):
    """Return ``(record_name, n_channels, fs, n_samples, [WfdbSignalSpec])``."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise FormatError("empty WFDB header")
    head = lines[0].split()
    if len(head) < 2:
        raise FormatError(f"bad WFDB record line {lines[0]!r}")
    name, nsig = head[0], int(head[1])
    fs = float(head[2].split("/")[0]) if len(head) > 2 else 250.0
    nsamp = int(head[3]) if len(head) > 3 else None
    specs = []
    for ln in lines[1:1 + nsig]:
        parts = ln.split()
        fmt = parts[1].split("x")[0].split(":")[0].split("+")[0]
        gain, baseline = 200.0, 0
        if len(parts) > 2:
            m = re.match(r"([0-9.eE+-]+)(?:\(([-0-9]+)\))?", parts[2])
            if m:
                gain = float(m.group(1)) or 200.0
                if m.group(2) is not None:
                    baseline = int(m.group(2))
        adc_zero = int(parts[4]) if len(parts) > 4 else 0
        if len(parts) > 2 and "(" not in parts[2]:
            baseline = adc_zero
        desc = " ".join(parts[8:]) if len(parts) > 8 else f"ch{len(specs)}"
        specs.append(WfdbSignalSpec(parts[0], fmt, gain, baseline, desc))
    if len(specs) != nsig:
        raise FormatError(f"header declares {nsig} signals, found {len(specs)}")
    return name, nsig, fs, nsamp, specs


def read_wfdb_212(header_path) -> list:
    """Read a two-channel format-212 record; one :class:`EcgRecord` per channel."""
    header_path = Path(header_path)
    name, nsig, fs, nsamp, specs = parse_wfdb_header(header_path.read_text(encoding="utf-8"))
    for s in specs:
        if s.fmt != "212":
            raise FormatError(f"{header_path}: unsupported format {s.fmt} (only 212)")
    if nsig != 2:
        raise FormatError(f"{header_path}: expected 2 channels, header declares {nsig}")
    payload = (header_path.parent / specs[0].file_name).read_bytes()
    raw = decode_212(payload, nsig)
    if nsamp is not None and raw.shape[0] < nsamp:
        raise FormatError(f"{header_path}: data truncated at byte offset {len(payload)} "
                          f"({raw.shape[0]} of {nsamp} samples)")
    if nsamp is not None:
        raw = raw[:nsamp]
    return [EcgRecord(f"{name}_{s.description}" if nsig > 1 else name, fs,
                      (raw[:, ch] - s.baseline) / s.gain)
            for ch, s in enumerate(specs)]


# --------------------------------------------------------------------------- resampling / windows


def resampled_length(n: int, src_hz: float, dst_hz: float) -> int:
    return max(1, int(math.floor(n * dst_hz / src_hz + 0.5)))


def resample(record: EcgRecord, target_hz: float) -> EcgRecord:
    """Linear interpolation onto a uniform grid at ``target_hz``; edges clamp."""
    if target_hz <= 0:
        raise ConfigError(f"target rate must be positive, got {target_hz}")
    n = len(record)
    m = resampled_length(n, record.sampling_rate_hz, target_hz)
    pos = np.arange(m) * (record.sampling_rate_hz / target_hz)
    out = np.interp(pos, np.arange(n), record.samples)
    return EcgRecord(record.record_id, float(target_hz), out)


def rescale_annotations(ann: RPeakAnnotations, src_hz: float, dst_hz: float) -> RPeakAnnotations:
    """Map indices with round-half-up; collisions after rescaling keep the first beat."""
    idx = np.floor(ann.peak_indices * (dst_hz / src_hz) + 0.5).astype(np.int64)
    keep = np.concatenate([[True], np.diff(idx) > 0]) if idx.size else np.zeros(0, bool)
    return RPeakAnnotations(idx[keep], [t for t, k in zip(ann.beat_types, keep) if k])


def normalize_segment(samples) -> np.ndarray:
    """Affine map of ``[min, max]`` onto ``[-1, 1]``; a flat segment maps to zeros."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise DataError("cannot normalize an empty segment")
    if not np.all(np.isfinite(x)):
        raise DataError("cannot normalize non-finite samples")
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros_like(x)
    return np.clip(2.0 * (x - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def window_record(record: EcgRecord, window_seconds: float = 20.0,
                  stride_seconds: float | None = None, multiple: int = 64) -> list:
    """Cut a record into independently normalized windows.

    Window length is ``round(window_seconds * fs)`` valid samples, zero-padded at the
    tail to the next multiple of ``multiple``.  The last window may be partial; its
    ``valid_length`` records how much of it is real signal.
    """
    if not 5.0 <= window_seconds <= 30.0:
        raise ConfigError(f"window must be within 5-30 s, got {window_seconds}")
    stride_seconds = window_seconds if stride_seconds is None else stride_seconds
    if not 0 < stride_seconds <= window_seconds:
        raise ConfigError("stride must be positive and no longer than the window")
    fs = record.sampling_rate_hz
    span = int(round(window_seconds * fs))
    padded = max(multiple, int(math.ceil(span / multiple)) * multiple)
    stride = max(1, int(round(stride_seconds * fs)))
    n = len(record)
    out = []
    for start in range(0, n, stride):
        chunk = record.samples[start:start + span]
        buf = np.zeros(padded)
        buf[:chunk.size] = normalize_segment(chunk)
        out.append(SegmentView(record.record_id, start, buf, padded, chunk.size, fs))
        if start + span >= n:
            break
    return out
