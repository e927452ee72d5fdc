"""Seeded synthetic session generator.

Stands in for the (private) recorded dataset: produces sessions in the exact
ingest file layout whose sickness-conditioned statistics follow the reported
effect directions — pupils shrink and gaze dispersion grows once discomfort
crosses the moderate threshold — with every magnitude exposed as a profile
parameter. Discomfort follows a per-participant monotone drift plus noise,
so scores rise with exposure time.

The sickness indicator driving the feature shifts is round(latent) > 2,
which matches the grouping rule applied to the reported integer scores.
All randomness flows from named streams of the profile seed; identical
seeds give bitwise-identical session files.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from scipy import ndimage

from . import ingest
from .errors import ConfigError
from .kvconfig import coerce_bool
from .rng import seed_stream

SIM_INTENSITY = {
    "BeachCity": 0.9,
    "RoadSide": 1.0,
    "FurnitureShop": 0.7,
    "SeaVoyage": 1.1,
    "RollerCoaster": 1.3,
}


@dataclass
class SynthProfile:
    participants: int = 27
    simulations: tuple = ingest.SIMULATIONS
    duration_s: float = 420.0
    report_cadence_s: float = 30.0
    rate_hz: int = 20
    seed: int = 0

    # discomfort trajectory: latent = susceptibility * intensity * drift * t/T + noise
    fms_drift_max: float = 6.5
    fms_noise: float = 0.35
    susceptibility_low: float = 0.55
    susceptibility_high: float = 1.45

    # effect sizes applied while the latent is in the sick condition
    effect_pupil_mm: float = 0.4
    effect_gaze_dispersion: float = 0.5
    effect_head_jitter: float = 0.0  # head-tracking showed no reliable shift

    # baseline feature levels
    pupil_base_mm: float = 3.2
    pupil_sd_mm: float = 0.25
    pupil_noise_mm: float = 0.12
    gaze_sigma: float = 0.12
    convergence_base_mm: float = 900.0
    convergence_noise_mm: float = 60.0
    head_angle_sigma: float = 0.05

    noise: bool = True
    blink_rate_hz: float = 0.02
    blink_duration_s: float = 0.15

    frames: str = "none"  # none | textured
    frame_disparity_px: int = 8
    frame_speed_px_s: float = 2.0

    def __post_init__(self):
        if self.duration_s % self.report_cadence_s != 0:
            raise ConfigError("duration must be a multiple of the report cadence")
        if self.effect_pupil_mm < 0 or self.effect_gaze_dispersion < 0 \
                or self.effect_head_jitter < 0:
            raise ConfigError("effect sizes must be nonnegative")
        if self.frames not in ("none", "textured"):
            raise ConfigError(f"frames must be none|textured, got {self.frames!r}")


_BOOL_FIELDS = {"noise"}
_INT_FIELDS = {"participants", "rate_hz", "seed", "frame_disparity_px"}
_STR_FIELDS = {"frames"}


def profile_from_kv(pairs: dict) -> SynthProfile:
    """Build a profile from key=value pairs (unknown keys rejected)."""
    kwargs = {}
    known = {f.name for f in fields(SynthProfile)}
    for key, raw in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown profile key {key!r}")
        if key == "simulations":
            kwargs[key] = tuple(s.strip() for s in raw.split(",") if s.strip())
        elif key in _BOOL_FIELDS:
            kwargs[key] = coerce_bool(raw)
        elif key in _INT_FIELDS:
            kwargs[key] = int(raw)
        elif key in _STR_FIELDS:
            kwargs[key] = raw
        else:
            kwargs[key] = float(raw)
    return SynthProfile(**kwargs)


def profile_to_kv(profile: SynthProfile) -> dict:
    out = {}
    for f in fields(SynthProfile):
        v = getattr(profile, f.name)
        out[f.name] = ",".join(v) if f.name == "simulations" else str(v)
    return out


def _ou_noise(rng, n, dt, sd, tau=20.0):
    if sd == 0.0:
        return np.zeros(n)
    a = np.exp(-dt / tau)
    drive = sd * np.sqrt(1.0 - a * a)
    out = np.empty(n)
    out[0] = rng.normal() * sd
    eps = rng.normal(size=n - 1)
    for i in range(1, n):
        out[i] = a * out[i - 1] + drive * eps[i - 1]
    return out


def _susceptibility(profile, participant):
    rng = seed_stream(profile.seed, f"synth.susceptibility.p{participant}")
    return rng.uniform(profile.susceptibility_low, profile.susceptibility_high)


def _blink_mask(rng, n, rate_hz, profile):
    """True where a blink hides the eyes; bursts are kept short and separated."""
    dur = max(1, int(round(profile.blink_duration_s * rate_hz)))
    starts = rng.random(n) < profile.blink_rate_hz / rate_hz
    mask = np.zeros(n, bool)
    guard = 0
    for i in range(n):
        if guard:
            guard -= 1
            continue
        if starts[i]:
            mask[i:i + dur] = True
            guard = dur + int(0.5 * rate_hz)  # keep gaps well under the limit
    return mask


def _texture_rgb(rng, size=512):
    base = np.stack([ndimage.gaussian_filter(rng.random((size, size)), 3.0,
                                             mode="wrap") for _ in range(3)], axis=-1)
    lo, hi = base.min(), base.max()
    return ((base - lo) / (hi - lo) * 255).astype(np.uint8)


def generate_session(profile: SynthProfile, participant: int,
                     simulation: str) -> ingest.SessionRecord:
    """One synthetic session on the exact 20 Hz grid."""
    rng = seed_stream(profile.seed, f"synth.p{participant}.{simulation}")
    rate = profile.rate_hz
    n = int(round(profile.duration_s * rate)) + 1
    t = np.arange(n, dtype=np.float64) / rate
    dt = 1.0 / rate

    susceptibility = _susceptibility(profile, participant)
    intensity = SIM_INTENSITY.get(simulation, 1.0)
    drift = susceptibility * intensity * profile.fms_drift_max * (t / profile.duration_s)
    latent = drift + (_ou_noise(rng, n, dt, profile.fms_noise)
                      if profile.noise else 0.0)
    sick = np.round(latent) > 2.0

    # reports at 30 s .. duration-30 s (the final instant is never prompted)
    n_reports = int(profile.duration_s / profile.report_cadence_s) - 1
    report_t = profile.report_cadence_s * np.arange(1, n_reports + 1)
    report_idx = np.round(report_t * rate).astype(int)
    scores = np.clip(np.round(latent[report_idx]), 0.0, 10.0)
    reports = np.column_stack([report_t, scores])

    # eye features
    noise_on = profile.noise
    base_rng = seed_stream(profile.seed, f"synth.baseline.p{participant}")
    pupil_base = profile.pupil_base_mm + base_rng.normal() * profile.pupil_sd_mm
    pupil_shift = profile.effect_pupil_mm * sick
    p_noise = profile.pupil_noise_mm if noise_on else 0.0
    left_pupil = np.clip(pupil_base - pupil_shift + rng.normal(size=n) * p_noise,
                         0.5, 11.5)
    right_pupil = np.clip(pupil_base + 0.05 - pupil_shift + rng.normal(size=n) * p_noise,
                          0.5, 11.5)

    sigma = profile.gaze_sigma * (1.0 + profile.effect_gaze_dispersion * sick)
    shared_x = rng.normal(size=n) * sigma
    shared_y = rng.normal(size=n) * sigma
    per_eye = 0.15 * profile.gaze_sigma if noise_on else 0.0

    def gaze_cols(jitter_seed_rng):
        gx = shared_x + jitter_seed_rng.normal(size=n) * per_eye
        gy = shared_y + jitter_seed_rng.normal(size=n) * per_eye
        norm = np.sqrt(1.0 + gx * gx + gy * gy)
        return gx / norm, gy / norm, 1.0 / norm

    lgx, lgy, lgz = gaze_cols(rng)
    rgx, rgy, rgz = gaze_cols(rng)
    conv = np.full(n, profile.convergence_base_mm)
    if noise_on:
        conv = conv + rng.normal(size=n) * profile.convergence_noise_mm
    conv = np.clip(conv, 100.0, 5000.0)

    eye_vals = np.column_stack([left_pupil, right_pupil,
                                lgx, lgy, lgz, rgx, rgy, rgz, conv])
    if noise_on:
        blink = _blink_mask(rng, n, rate, profile)
        eye_vals[blink, 0:2] = 0.0   # pupil 0 -> flagged invalid downstream
        eye_vals[blink, 2:8] = 0.0   # zero gaze cannot be normalized

    # head quaternion: small-angle rotation with optional jitter growth
    h_sigma = profile.head_angle_sigma * (1.0 + profile.effect_head_jitter * sick)
    rx = _ou_noise(rng, n, dt, 1.0, tau=2.0) * h_sigma if noise_on else np.zeros(n)
    ry = _ou_noise(rng, n, dt, 1.0, tau=2.0) * h_sigma if noise_on else np.zeros(n)
    rz = _ou_noise(rng, n, dt, 1.0, tau=2.0) * h_sigma if noise_on else np.zeros(n)
    qnorm = np.sqrt(1.0 + 0.25 * (rx * rx + ry * ry + rz * rz))
    head_vals = np.column_stack([0.5 * rx / qnorm, 0.5 * ry / qnorm,
                                 0.5 * rz / qnorm, 1.0 / qnorm])

    eye = ingest.Stream(t.copy(), eye_vals, ingest._validate_eye(
        np.column_stack([t, eye_vals])))
    head = ingest.Stream(t.copy(), head_vals, np.ones(n, bool))

    if profile.frames == "textured":
        frames = _textured_frames(profile, rng, t, latent)
    else:
        frames = ingest.empty_frame_stream()

    return ingest.SessionRecord(f"P{participant:02d}", simulation, eye, head,
                                frames, reports, rate_hz=rate)


def _textured_frames(profile, rng, t, latent):
    size = ingest.FRAME_SIZE
    tex = _texture_rgb(rng)
    tex_size = tex.shape[0]
    n = len(t)
    disp = int(profile.frame_disparity_px)
    left = np.empty((n, size, size, 3), np.uint8)
    right = np.empty_like(left)
    cols = np.arange(size)
    offset = 0.0
    dt = t[1] - t[0] if n > 1 else 0.05
    for i in range(n):
        offset += profile.frame_speed_px_s * (1.0 + max(latent[i], 0.0)) * dt
        off = int(round(offset))
        lcols = (cols + off) % tex_size
        rcols = (cols + off + disp) % tex_size
        left[i] = tex[:size, lcols]
        right[i] = tex[:size, rcols]
    return ingest.FrameStream(t.copy(), left, right, np.ones(n, bool))


def generate_dataset(profile: SynthProfile, out_dir) -> list:
    """Write participants x simulations sessions under out_dir; returns paths."""
    from pathlib import Path
    out_dir = Path(out_dir)
    paths = []
    for p in range(1, profile.participants + 1):
        for sim in profile.simulations:
            record = generate_session(profile, p, sim)
            session_dir = out_dir / f"P{p:02d}" / sim
            ingest.write_session(record, session_dir)
            paths.append(session_dir)
    return paths
