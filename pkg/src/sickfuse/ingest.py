"""Session log ingestion: parse, validate, and align sensor streams.

A session directory holds four artifacts:

    eye.csv     t,left_pupil_mm,right_pupil_mm,lgx,lgy,lgz,rgx,rgy,rgz,convergence_mm
    head.csv    t,qx,qy,qz,qw
    fms.csv     t,score            (t a nonnegative multiple of 30 s, score in [0,10])
    frames.bin  magic "SFR1", then records of (t: f64 LE, left RGB8, right RGB8)
    frames.idx  one byte offset per frame record, one per line

Frames are 256x256 RGB, 8-bit per channel. An empty frames.bin (magic only)
marks a session recorded without video. `write_session` emits exactly this
layout so generated and recorded data round-trip identically.

Parsing is a pure function of file content; sessions can be parsed
concurrently. Alignment snaps every stream onto the uniform 20 Hz grid and
hold-fills samples flagged invalid, preserving the flags for the window
budget downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyError, GapError, MissingStream, OrderError, ParseError

SIMULATIONS = ("BeachCity", "RoadSide", "FurnitureShop", "SeaVoyage", "RollerCoaster")

EYE_HEADER = "t,left_pupil_mm,right_pupil_mm,lgx,lgy,lgz,rgx,rgy,rgz,convergence_mm"
HEAD_HEADER = "t,qx,qy,qz,qw"
FMS_HEADER = "t,score"

FRAME_MAGIC = b"SFR1"
FRAME_SIZE = 256
FRAME_BYTES = FRAME_SIZE * FRAME_SIZE * 3
FRAME_RECORD = 8 + 2 * FRAME_BYTES

GAZE_NORM_TOL = 1e-3
PUPIL_MAX_MM = 12.0
GAP_LIMIT_S = 0.5
REPORT_CADENCE_S = 30.0


@dataclass
class Stream:
    """Timestamped feature rows plus per-sample validity."""

    t: np.ndarray       # (n,)
    values: np.ndarray  # (n, k)
    valid: np.ndarray   # (n,) bool

    def __len__(self):
        return len(self.t)


@dataclass
class FrameStream:
    t: np.ndarray       # (n,)
    left: np.ndarray    # (n, 256, 256, 3) uint8
    right: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return len(self.t)


def empty_frame_stream() -> FrameStream:
    z = (0, FRAME_SIZE, FRAME_SIZE, 3)
    return FrameStream(np.zeros(0), np.zeros(z, np.uint8), np.zeros(z, np.uint8),
                       np.zeros(0, bool))


@dataclass
class SessionRecord:
    participant_id: str
    simulation: str
    eye: Stream
    head: Stream
    frames: FrameStream
    reports: np.ndarray          # (m, 2) columns (t, score)
    rate_hz: int = 20
    aligned: bool = False
    invalid_counts: dict = field(default_factory=dict)

    @property
    def has_frames(self) -> bool:
        return len(self.frames) > 0

    def duration(self) -> float:
        ends = [self.eye.t[-1], self.head.t[-1]]
        if self.has_frames:
            ends.append(self.frames.t[-1])
        return float(min(ends))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _read_csv(path, header, n_cols):
    if not path.exists():
        raise MissingStream(f"missing {path.name} in {path.parent}")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != header:
            raise ParseError(f"bad header, expected {header!r}", path=str(path), line=1)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n_cols:
                raise ParseError(f"expected {n_cols} columns, got {len(parts)}",
                                 path=str(path), line=lineno)
            try:
                row = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"non-numeric value in {line!r}",
                                 path=str(path), line=lineno) from None
            if not all(np.isfinite(row)):
                raise ParseError("non-finite value", path=str(path), line=lineno)
            rows.append(row)
    return np.array(rows, dtype=np.float64).reshape(len(rows), n_cols)


def _require_strictly_increasing(t, what):
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        bad = int(np.argmin(np.diff(t) > 0)) + 1
        raise OrderError(f"{what} timestamps not strictly increasing near row {bad}")


def _validate_eye(values):
    pupils_ok = ((values[:, 1] > 0) & (values[:, 1] <= PUPIL_MAX_MM) &
                 (values[:, 2] > 0) & (values[:, 2] <= PUPIL_MAX_MM))
    lnorm = np.linalg.norm(values[:, 3:6], axis=1)
    rnorm = np.linalg.norm(values[:, 6:9], axis=1)
    gaze_ok = ((np.abs(lnorm - 1.0) <= GAZE_NORM_TOL) &
               (np.abs(rnorm - 1.0) <= GAZE_NORM_TOL))
    return pupils_ok & gaze_ok


def _validate_head(values):
    qnorm = np.linalg.norm(values[:, 1:5], axis=1)
    return np.abs(qnorm - 1.0) <= GAZE_NORM_TOL


def _parse_fms(path):
    data = _read_csv(path, FMS_HEADER, 2)
    for i, (t, score) in enumerate(data):
        if not 0.0 <= score <= 10.0:
            raise ParseError(f"fms score {score} outside [0,10]",
                             path=str(path), line=i + 2)
        if t < 0 or abs(t - REPORT_CADENCE_S * round(t / REPORT_CADENCE_S)) > 1e-6:
            raise ParseError(f"report time {t} is not a multiple of 30 s",
                             path=str(path), line=i + 2)
    _require_strictly_increasing(data[:, 0], "fms")
    return data


def _parse_frames(dirpath):
    bin_path = dirpath / "frames.bin"
    idx_path = dirpath / "frames.idx"
    if not bin_path.exists() or not idx_path.exists():
        raise MissingStream(f"missing frames.bin/frames.idx in {dirpath}")
    blob = bin_path.read_bytes()
    if blob[:4] != FRAME_MAGIC:
        raise ParseError("bad frames.bin magic", path=str(bin_path))
    offsets = [int(line) for line in idx_path.read_text().split()]
    n = len(offsets)
    ts = np.zeros(n)
    left = np.zeros((n, FRAME_SIZE, FRAME_SIZE, 3), np.uint8)
    right = np.zeros_like(left)
    for i, off in enumerate(offsets):
        if off + FRAME_RECORD > len(blob):
            raise ParseError(f"frame record {i} truncated", path=str(bin_path))
        (ts[i],) = struct.unpack_from("<d", blob, off)
        pos = off + 8
        left[i] = np.frombuffer(blob, np.uint8, FRAME_BYTES, pos).reshape(
            FRAME_SIZE, FRAME_SIZE, 3)
        right[i] = np.frombuffer(blob, np.uint8, FRAME_BYTES, pos + FRAME_BYTES).reshape(
            FRAME_SIZE, FRAME_SIZE, 3)
    _require_strictly_increasing(ts, "frames")
    return FrameStream(ts, left, right, np.ones(n, bool))


def parse_session(dirpath, participant_id=None, simulation=None) -> SessionRecord:
    """Load one session directory into a validated (unaligned) record.

    Participant and simulation default to the trailing two path components
    (dataset layout: root/<participant>/<simulation>/).
    """
    from pathlib import Path
    dirpath = Path(dirpath)
    participant_id = participant_id or dirpath.parent.name
    simulation = simulation or dirpath.name

    eye_raw = _read_csv(dirpath / "eye.csv", EYE_HEADER, 10)
    _require_strictly_increasing(eye_raw[:, 0], "eye")
    eye = Stream(eye_raw[:, 0].copy(), eye_raw[:, 1:].copy(), _validate_eye(eye_raw))

    head_raw = _read_csv(dirpath / "head.csv", HEAD_HEADER, 5)
    _require_strictly_increasing(head_raw[:, 0], "head")
    head = Stream(head_raw[:, 0].copy(), head_raw[:, 1:].copy(), _validate_head(head_raw))

    reports = _parse_fms(dirpath / "fms.csv")
    frames = _parse_frames(dirpath)

    return SessionRecord(participant_id, simulation, eye, head, frames, reports)


# ---------------------------------------------------------------------------
# serialization (shared with the synthetic generator)
# ---------------------------------------------------------------------------

def _format_row(values):
    return ",".join(repr(float(v)) for v in values)


def write_session(record: SessionRecord, dirpath) -> None:
    from pathlib import Path
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)

    with open(dirpath / "eye.csv", "w", encoding="utf-8") as fh:
        fh.write(EYE_HEADER + "\n")
        for t, row in zip(record.eye.t, record.eye.values):
            fh.write(_format_row([t, *row]) + "\n")

    with open(dirpath / "head.csv", "w", encoding="utf-8") as fh:
        fh.write(HEAD_HEADER + "\n")
        for t, row in zip(record.head.t, record.head.values):
            fh.write(_format_row([t, *row]) + "\n")

    with open(dirpath / "fms.csv", "w", encoding="utf-8") as fh:
        fh.write(FMS_HEADER + "\n")
        for t, score in record.reports:
            fh.write(_format_row([t, score]) + "\n")

    offsets = []
    with open(dirpath / "frames.bin", "wb") as fh:
        fh.write(FRAME_MAGIC)
        pos = 4
        for i in range(len(record.frames)):
            offsets.append(pos)
            fh.write(struct.pack("<d", record.frames.t[i]))
            fh.write(record.frames.left[i].tobytes())
            fh.write(record.frames.right[i].tobytes())
            pos += FRAME_RECORD
    (dirpath / "frames.idx").write_text("".join(f"{o}\n" for o in offsets))


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------

def _snap_indices(src_t, grid):
    """Nearest source index per grid point (ties to the earlier sample)."""
    pos = np.searchsorted(src_t, grid)
    left = np.clip(pos - 1, 0, len(src_t) - 1)
    right = np.clip(pos, 0, len(src_t) - 1)
    d_left = np.abs(grid - src_t[left])
    d_right = np.abs(src_t[right] - grid)
    return np.where(d_left <= d_right, left, right)


def _check_gaps(valid, rate_hz, stream_name):
    limit = int(GAP_LIMIT_S * rate_hz)  # strictly more than this many points
    run = 0
    for i, ok in enumerate(valid):
        run = 0 if ok else run + 1
        if run > limit:
            # extend to the full run for reporting
            end = i
            while end + 1 < len(valid) and not valid[end + 1]:
                end += 1
            start = i - run + 1
            raise GapError(stream_name, start / rate_hz, (end + 1) / rate_hz)


def _align_stream(stream: Stream, grid, rate_hz, name):
    idx = _snap_indices(stream.t, grid)
    too_far = np.abs(stream.t[idx] - grid) > (0.5 / rate_hz + 1e-9)
    values = stream.values[idx].copy()
    valid = stream.valid[idx] & ~too_far
    _check_gaps(valid, rate_hz, name)
    _hold_fill(values, valid)
    return Stream(grid.copy(), values, valid)


def _hold_fill(values, valid):
    """In place: invalid rows take the last valid row (first valid backfills)."""
    if valid.all():
        return
    if not valid.any():
        return
    first = int(np.argmax(valid))
    values[:first] = values[first]
    last = values[first]
    for i in range(first, len(values)):
        if valid[i]:
            last = values[i]
        else:
            values[i] = last


def align_streams(record: SessionRecord, rate_hz: int = 20) -> SessionRecord:
    """Resample all streams onto the uniform grid t = k / rate_hz.

    Nearest-neighbor in time; invalid samples are hold-filled and counted.
    Idempotent: aligning an aligned record returns an identical one.
    """
    if len(record.eye) == 0 or len(record.head) == 0:
        raise EmptyError("cannot align a session with an empty eye/head stream")
    duration = record.duration()
    n = int(np.floor(duration * rate_hz + 1e-9)) + 1
    grid = np.arange(n, dtype=np.float64) / rate_hz

    eye = _align_stream(record.eye, grid, rate_hz, "eye")
    head = _align_stream(record.head, grid, rate_hz, "head")

    if record.has_frames:
        idx = _snap_indices(record.frames.t, grid)
        too_far = np.abs(record.frames.t[idx] - grid) > (0.5 / rate_hz + 1e-9)
        fvalid = record.frames.valid[idx] & ~too_far
        _check_gaps(fvalid, rate_hz, "frames")
        frames = FrameStream(grid.copy(), record.frames.left[idx].copy(),
                             record.frames.right[idx].copy(), fvalid)
    else:
        frames = empty_frame_stream()

    counts = {
        "eye": int((~eye.valid).sum()),
        "head": int((~head.valid).sum()),
        "frames": int((~frames.valid).sum()) if record.has_frames else 0,
    }
    return replace(record, eye=eye, head=head, frames=frames,
                   aligned=True, invalid_counts=counts)
