"""Ground-truth construction: windows, severity classes, model inputs.

A window is one labeled data point: the 11 seconds of aligned data leading
up to (and including) an FMS report. At 20 Hz that is 220 samples covering
the eleven one-second segments labeled t-10 .. t. Severity classes come
from quartile thresholds of the training scores; the boundary rule is
closed below (a score equal to a threshold takes the lower class).

The model consumes a fixed number of consecutive timesteps per window
(60 at full scale); the final `timestep` samples are selected, with a
uniform-stride variant behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyError, RangeError, ShortWindow
from .ingest import SessionRecord
from .preprocess import farneback_flow, flow_to_rgb, sgbm_disparity

SEVERITY_CLASSES = ("None", "Low", "Medium", "High")
WINDOW_SECONDS = 11.0
EYE_FEATURES = 9
HEAD_FEATURES = 4
SUBSEQUENCES = 4


@dataclass
class QuantileThresholds:
    q1: float
    q2: float
    q3: float

    def __post_init__(self):
        if not self.q1 <= self.q2 <= self.q3:
            raise ConfigError(f"quantiles must be ordered, got {self}")

    def as_tuple(self):
        return (self.q1, self.q2, self.q3)


def compute_fms_quantiles(scores) -> QuantileThresholds:
    """25th/50th/75th percentiles via linear interpolation of order statistics."""
    scores = np.asarray(list(scores), dtype=np.float64)
    if scores.size == 0:
        raise EmptyError("no scores to take quantiles of")
    if scores.size < 4:
        raise EmptyError(f"need at least 4 scores, got {scores.size}")
    q1, q2, q3 = np.percentile(scores, [25.0, 50.0, 75.0], method="linear")
    return QuantileThresholds(float(q1), float(q2), float(q3))


def classify_severity(fms: float, q: QuantileThresholds) -> str:
    """Four-way severity bucketing; ties at a threshold take the lower class."""
    if not 0.0 <= fms <= 10.0:
        raise RangeError(f"fms {fms} outside [0,10]")
    if fms <= q.q1:
        return "None"
    if fms <= q.q2:
        return "Low"
    if fms <= q.q3:
        return "Medium"
    return "High"


def severity_index(name: str) -> int:
    return SEVERITY_CLASSES.index(name)


@dataclass
class Window:
    """One labeled data point; streams raw (unnormalized), frames optional."""

    window_id: str
    participant_id: str
    simulation: str
    t_report: float
    fms: float
    eye: np.ndarray               # (n, 9)
    head: np.ndarray              # (n, 4)
    frames_left: np.ndarray | None = None   # (n, 256, 256, 3) uint8
    frames_right: np.ndarray | None = None
    invalid_fraction: float = 0.0
    # preprocessed video-branch tensors (from the cache); keyed by timestep
    precomputed: dict = field(default_factory=dict)

    @property
    def session_key(self) -> str:
        return f"{self.participant_id}/{self.simulation}"

    @property
    def n_samples(self) -> int:
        return self.eye.shape[0]

    @property
    def has_frames(self) -> bool:
        return self.frames_left is not None or bool(self.precomputed)


def build_windows(session: SessionRecord, invalid_budget: float = 0.2,
                  keep_frames: bool = True):
    """Slice an aligned session into one window per in-range report.

    Returns (windows, dropped) where `dropped` lists (window_id, reason) for
    windows exceeding the invalid-sample budget. Reports whose full span
    does not fit inside the session produce nothing.
    """
    if not session.aligned:
        raise ConfigError("build_windows needs an aligned session")
    rate = session.rate_hz
    span = int(round(WINDOW_SECONDS * rate))  # 220 samples at 20 Hz
    n = len(session.eye)
    windows, dropped = [], []
    for t_report, fms in session.reports:
        end = int(round(t_report * rate))
        start = end - span + 1
        if start < 0 or end >= n:
            continue
        sl = slice(start, end + 1)
        fractions = [float((~session.eye.valid[sl]).mean()),
                     float((~session.head.valid[sl]).mean())]
        if session.has_frames:
            fractions.append(float((~session.frames.valid[sl]).mean()))
        frac = max(fractions)
        wid = f"{session.participant_id}|{session.simulation}|{int(round(t_report))}"
        if frac > invalid_budget:
            dropped.append((wid, f"invalid fraction {frac:.3f} > {invalid_budget}"))
            continue
        win = Window(
            window_id=wid,
            participant_id=session.participant_id,
            simulation=session.simulation,
            t_report=float(t_report),
            fms=float(fms),
            eye=session.eye.values[sl].copy(),
            head=session.head.values[sl].copy(),
            frames_left=session.frames.left[sl].copy()
            if (keep_frames and session.has_frames) else None,
            frames_right=session.frames.right[sl].copy()
            if (keep_frames and session.has_frames) else None,
            invalid_fraction=frac,
        )
        windows.append(win)
    return windows, dropped


@dataclass
class EyeHeadNorm:
    """Per-feature standardization constants, fit on training data only."""

    eye_mu: np.ndarray
    eye_sigma: np.ndarray
    head_mu: np.ndarray
    head_sigma: np.ndarray

    @staticmethod
    def identity():
        return EyeHeadNorm(np.zeros(EYE_FEATURES), np.ones(EYE_FEATURES),
                           np.zeros(HEAD_FEATURES), np.ones(HEAD_FEATURES))


def _per_feature_stats(rows, fallback_sigma=None):
    mu = rows.mean(axis=0)
    sigma = rows.std(axis=0)  # population, matching the normalization formula
    if fallback_sigma is not None:
        sigma = np.where(sigma == 0.0, fallback_sigma, sigma)
    sigma = np.where(sigma == 0.0, 1.0, sigma)
    return mu, sigma


def compute_norm_stats(windows, indices=None):
    """Per-session (mu, sigma) from the given (training) windows.

    Returns (per_session: dict session_key -> EyeHeadNorm, pooled). Sessions
    absent from the training windows fall back to the pooled statistics.
    Constant features fall back to the pooled sigma, then to 1.
    """
    chosen = windows if indices is None else [windows[i] for i in indices]
    if not chosen:
        raise EmptyError("no windows to fit normalization on")
    all_eye = np.concatenate([w.eye for w in chosen], axis=0)
    all_head = np.concatenate([w.head for w in chosen], axis=0)
    pe_mu, pe_sigma = _per_feature_stats(all_eye)
    ph_mu, ph_sigma = _per_feature_stats(all_head)
    pooled = EyeHeadNorm(pe_mu, pe_sigma, ph_mu, ph_sigma)

    per_session = {}
    by_session = {}
    for w in chosen:
        by_session.setdefault(w.session_key, []).append(w)
    for key, group in by_session.items():
        eye = np.concatenate([w.eye for w in group], axis=0)
        head = np.concatenate([w.head for w in group], axis=0)
        e_mu, e_sigma = _per_feature_stats(eye, pooled.eye_sigma)
        h_mu, h_sigma = _per_feature_stats(head, pooled.head_sigma)
        per_session[key] = EyeHeadNorm(e_mu, e_sigma, h_mu, h_sigma)
    return per_session, pooled


def select_indices(n: int, timestep: int, selection: str = "tail"):
    if n < timestep:
        raise ShortWindow(f"window holds {n} samples, model needs {timestep}")
    if selection == "tail":
        return np.arange(n - timestep, n)
    if selection == "strided":
        return np.round(np.linspace(0, n - 1, timestep)).astype(int)
    raise ConfigError(f"unknown selection {selection!r}")


def window_to_model_inputs(window: Window, timestep: int = 60,
                           norm: EyeHeadNorm | None = None,
                           modalities=("eye", "head"),
                           selection: str = "tail",
                           max_disparity: int = 64) -> dict:
    """Shape one window into the tensors the fusion model consumes.

    Selects the final `timestep` consecutive samples (tail selection),
    scales pixels to [0,1], applies the stored per-feature (mu, sigma) to
    eye/head rows, and splits the rows into 4 contiguous subsequences.
    """
    if timestep % SUBSEQUENCES != 0:
        raise ConfigError(f"timestep {timestep} must be a multiple of {SUBSEQUENCES}")
    norm = norm or EyeHeadNorm.identity()
    sel = select_indices(window.n_samples, timestep, selection)
    sub_len = timestep // SUBSEQUENCES
    out = {}
    for modality in modalities:
        if modality == "eye":
            rows = (window.eye[sel] - norm.eye_mu) / norm.eye_sigma
            out["eye"] = rows.reshape(SUBSEQUENCES, sub_len, EYE_FEATURES)
        elif modality == "head":
            rows = (window.head[sel] - norm.head_mu) / norm.head_sigma
            out["head"] = rows.reshape(SUBSEQUENCES, sub_len, HEAD_FEATURES)
        elif modality in ("video", "flow", "disparity"):
            out[modality] = _video_modality(window, modality, sel, timestep,
                                            max_disparity)
        else:
            raise ConfigError(f"unknown modality {modality!r}")
    return out


def _video_modality(window, modality, sel, timestep, max_disparity):
    cached = window.precomputed.get(modality)
    if cached is not None:
        if cached.shape[0] != timestep:
            raise ConfigError(
                f"cached {modality} has {cached.shape[0]} steps, need {timestep}")
        return cached
    if window.frames_left is None:
        raise ShortWindow(f"window {window.window_id} has no frames for {modality!r}")
    left = window.frames_left
    if modality == "video":
        return left[sel].astype(np.float64) / 255.0
    if modality == "flow":
        frames = []
        for j in sel:
            prev = left[j - 1] if j > 0 else left[j]
            frames.append(flow_to_rgb(farneback_flow(prev, left[j])))
        return np.stack(frames)
    # disparity
    maps = []
    for j in sel:
        d = sgbm_disparity(left[j], window.frames_right[j],
                           max_disparity=max_disparity)
        plane = np.where(d.valid, d.disparity, 0.0) / max_disparity
        maps.append(plane[..., None])
    return np.stack(maps)
