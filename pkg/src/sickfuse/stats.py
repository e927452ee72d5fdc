"""Sickness/non-sickness grouping, paired t-tests, and gaze heatmaps.

The grouping rule is fixed by the discomfort threshold: a window counts as
non-sickness when its score is <= 2 and sickness when > 2. Per simulation,
each participant contributes one (non-sick mean, sick mean) pair; missing
either condition excludes the participant from that simulation's test.

The two-sided p-value comes from the regularized incomplete beta function
I_x(df/2, 1/2) at x = df/(df + t^2), evaluated with a continued fraction.
The t statistic uses the sample (n-1) standard deviation, distinct from the
population convention used in feature normalization.

Everything here is a pure function; feature/simulation loops can run in
parallel safely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, EmptyError

SICKNESS_THRESHOLD = 2.0


# ---------------------------------------------------------------------------
# t distribution
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: int) -> float:
    """P(|T_df| >= |t|) via the incomplete beta."""
    if df < 1:
        raise DegenerateError(f"t-test needs df >= 1, got {df}")
    x = df / (df + t * t)
    return betainc_regularized(df / 2.0, 0.5, x)


# ---------------------------------------------------------------------------
# paired t-test
# ---------------------------------------------------------------------------

@dataclass
class TTestResult:
    t: float
    df: int
    p: float
    mean_a: float
    sd_a: float
    mean_b: float
    sd_b: float
    n: int


def paired_ttest(a, b) -> TTestResult:
    """Two-sided paired t-test of equal-length series (sample sd, df = n-1)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DegenerateError(f"paired series must match: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise DegenerateError(f"paired t-test needs n >= 2, got {n}")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise DegenerateError("zero-variance differences")
    t = float(d.mean() / (sd / np.sqrt(n)))
    return TTestResult(t=t, df=n - 1, p=float(t_sf_two_sided(t, n - 1)),
                       mean_a=float(a.mean()), sd_a=float(a.std(ddof=1)),
                       mean_b=float(b.mean()), sd_b=float(b.std(ddof=1)), n=n)


# ---------------------------------------------------------------------------
# grouping
# ---------------------------------------------------------------------------

FEATURE_SELECTORS = {
    # raw-unit window features mirroring the reported analyses
    "pupil_mean": lambda w: float(w.eye[:, 0:2].mean()),
    "gaze_x_mean": lambda w: float(w.eye[:, 2].mean()),
    "gaze_y_mean": lambda w: float(w.eye[:, 3].mean()),
    "gaze_dispersion": lambda w: float(np.sqrt(w.eye[:, 2].var() + w.eye[:, 3].var())),
    "head_w_mean": lambda w: float(w.head[:, 3].mean()),
}


@dataclass
class PairedGroups:
    """Per simulation: aligned per-participant means under both conditions."""

    simulation: str
    participants: list
    non_sick: np.ndarray
    sick: np.ndarray
    excluded: list


def group_by_sickness(windows, feature, threshold: float = SICKNESS_THRESHOLD):
    """Per-simulation paired means of `feature` (name or callable) by condition."""
    selector = FEATURE_SELECTORS[feature] if isinstance(feature, str) else feature
    by_sim: dict = {}
    for w in windows:
        by_sim.setdefault(w.simulation, {}).setdefault(w.participant_id, {
            "non_sick": [], "sick": []})
        bucket = "sick" if w.fms > threshold else "non_sick"
        by_sim[w.simulation][w.participant_id][bucket].append(selector(w))
    groups = []
    for sim in sorted(by_sim):
        participants, non_sick, sick, excluded = [], [], [], []
        for pid in sorted(by_sim[sim]):
            values = by_sim[sim][pid]
            if values["non_sick"] and values["sick"]:
                participants.append(pid)
                non_sick.append(float(np.mean(values["non_sick"])))
                sick.append(float(np.mean(values["sick"])))
            else:
                excluded.append(pid)
        groups.append(PairedGroups(sim, participants, np.array(non_sick),
                                   np.array(sick), excluded))
    return groups


def sickness_ttest(windows, feature, threshold: float = SICKNESS_THRESHOLD):
    """(simulation -> TTestResult) over paired participant means."""
    results = {}
    for group in group_by_sickness(windows, feature, threshold):
        if len(group.participants) >= 2:
            try:
                results[group.simulation] = paired_ttest(group.non_sick, group.sick)
            except DegenerateError:
                continue
    return results


# ---------------------------------------------------------------------------
# gaze heatmap
# ---------------------------------------------------------------------------

def gaze_heatmap(samples, grid: int = 64):
    """2-D histogram of normalized gaze positions over [-1,1]^2.

    Out-of-range samples clamp to the edge bins. Returns (intensity, counts)
    where intensity is counts normalized to [0,1] by the hottest bin.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    counts = np.zeros((grid, grid), dtype=np.int64)
    if samples.size:
        ix = np.clip(((samples[:, 0] + 1.0) / 2.0 * grid).astype(int), 0, grid - 1)
        iy = np.clip(((samples[:, 1] + 1.0) / 2.0 * grid).astype(int), 0, grid - 1)
        np.add.at(counts, (iy, ix), 1)
    peak = counts.max()
    intensity = counts / peak if peak > 0 else counts.astype(np.float64)
    return intensity.astype(np.float64), counts


def write_pgm(path, intensity) -> None:
    """8-bit binary PGM (P5) of an intensity grid in [0,1]."""
    img = np.clip(np.asarray(intensity) * 255.0, 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def gaze_samples(windows):
    """Stack (x, y) of both eyes' gaze directions from windows."""
    if not windows:
        raise EmptyError("no windows to extract gaze from")
    pieces = [np.concatenate([w.eye[:, 2:4], w.eye[:, 5:7]], axis=0)
              for w in windows]
    return np.concatenate(pieces, axis=0)
