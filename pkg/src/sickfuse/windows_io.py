"""Window cache: SFW1 blobs plus the windows.csv index.

Each window is one binary blob: magic "SFW1", a length-prefixed window id,
a u64 record count, then named tensors in the checkpoint value encoding
(eye/head raw rows, a small meta record, and any precomputed video-branch
tensors). windows.csv lists every window, dropped ones included, with an
informational severity column computed over the whole set; fold-local
severity is always recomputed by the trainer from training scores only.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import MissingStream, ParseError
from .labeling import Window, classify_severity, compute_fms_quantiles
from .tensor import checkpoint

CACHE_MAGIC = b"SFW1"
VIDEO_KEYS = ("video", "flow", "disparity")


def save_window(path, window: Window) -> None:
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        encoded = window.window_id.encode("utf-8")
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        records = [("eye", window.eye), ("head", window.head),
                   ("meta", np.array([window.t_report, window.fms,
                                      window.invalid_fraction]))]
        for key in VIDEO_KEYS:
            if key in window.precomputed:
                records.append((key, window.precomputed[key]))
        fh.write(struct.pack("<Q", len(records)))
        for name, arr in records:
            checkpoint.write_record(fh, name, arr)


def load_window(path) -> Window:
    blob = Path(path).read_bytes()
    if blob[:4] != CACHE_MAGIC:
        raise ParseError("bad window cache magic", path=str(path))
    (id_len,) = struct.unpack_from("<Q", blob, 4)
    pos = 12
    window_id = blob[pos:pos + id_len].decode("utf-8")
    pos += id_len
    (n_records,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    values = {}
    for _ in range(n_records):
        name, arr, pos = checkpoint.read_record(blob, pos, path=str(path))
        values[name] = arr
    try:
        participant, simulation, _ = window_id.split("|")
    except ValueError:
        raise ParseError(f"bad window id {window_id!r}", path=str(path)) from None
    meta = values["meta"]
    return Window(
        window_id=window_id,
        participant_id=participant,
        simulation=simulation,
        t_report=float(meta[0]),
        fms=float(meta[1]),
        eye=values["eye"],
        head=values["head"],
        invalid_fraction=float(meta[2]),
        precomputed={k: values[k] for k in VIDEO_KEYS if k in values},
    )


def _blob_name(window_id: str) -> str:
    return window_id.replace("|", "__") + ".sfw"


CSV_FIELDS = ["window_id", "participant", "simulation", "t_report", "fms",
              "severity", "dropped", "invalid_fraction", "reason"]


def save_cache(cache_dir, windows, dropped=(), extra_meta=None) -> None:
    """Write blobs and windows.csv; severity column is informational (global)."""
    cache_dir = Path(cache_dir)
    (cache_dir / "windows").mkdir(parents=True, exist_ok=True)
    rows = []
    quantiles = None
    if len(windows) >= 4:
        quantiles = compute_fms_quantiles([w.fms for w in windows])
    for w in windows:
        save_window(cache_dir / "windows" / _blob_name(w.window_id), w)
        severity = classify_severity(w.fms, quantiles) if quantiles else ""
        rows.append({"window_id": w.window_id, "participant": w.participant_id,
                     "simulation": w.simulation, "t_report": w.t_report,
                     "fms": w.fms, "severity": severity, "dropped": "0",
                     "invalid_fraction": f"{w.invalid_fraction:.6f}", "reason": ""})
    for window_id, reason in dropped:
        participant, simulation, t_report = window_id.split("|")
        rows.append({"window_id": window_id, "participant": participant,
                     "simulation": simulation, "t_report": t_report, "fms": "",
                     "severity": "", "dropped": "1", "invalid_fraction": "",
                     "reason": reason})
    with open(cache_dir / "windows.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    if extra_meta:
        from .kvconfig import save_kv
        save_kv(cache_dir / "cache.cfg", {k: str(v) for k, v in extra_meta.items()})


def load_cache(cache_dir) -> list:
    """Windows in windows.csv order (dropped rows skipped)."""
    cache_dir = Path(cache_dir)
    index = cache_dir / "windows.csv"
    if not index.exists():
        raise MissingStream(f"no windows.csv in {cache_dir}")
    windows = []
    with open(index, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["dropped"] == "1":
                continue
            windows.append(load_window(cache_dir / "windows" /
                                       _blob_name(row["window_id"])))
    return windows
