"""End-to-end video path: textured synth session through cache and predict.

One 60 s frames-enabled session is ~470 MB of stereo frames (the shortest
session with an in-range report), so this module keeps to a single
participant and a small timestep.
"""

import csv

import numpy as np

from sickfuse.cli import main
from sickfuse.ingest import align_streams, parse_session
from sickfuse.model import ModelConfig, build_model, save_model
from sickfuse.windows_io import load_cache


def test_textured_session_preprocess_and_predict(tmp_path):
    data = tmp_path / "data"
    code = main(["synth", "--out", str(data), "--participants", "1",
                 "--simulations", "RollerCoaster", "--duration-s", "30",
                 "--frames", "textured", "--seed", "3"])
    assert code == 0

    session_dir = data / "P01" / "RollerCoaster"
    parsed = parse_session(session_dir)
    assert parsed.has_frames
    assert parsed.frames.left.shape[1:] == (256, 256, 3)
    aligned = align_streams(parsed)
    assert len(aligned.frames) == len(aligned.eye) == 30 * 20 + 1

    cache = tmp_path / "cache"
    code = main(["preprocess", "--data", str(data), "--cache", str(cache),
                 "--timestep", "8", "--max-disparity", "16"])
    assert code == 0

    windows = load_cache(cache)
    assert len(windows) == 1  # single report at t=30
    w = windows[0]
    assert w.precomputed["video"].shape == (8, 256, 256, 3)
    assert w.precomputed["flow"].shape == (8, 256, 256, 3)
    assert w.precomputed["disparity"].shape == (8, 256, 256, 1)
    assert 0.0 <= w.precomputed["video"].min() <= w.precomputed["video"].max() <= 1.0
    # injected stereo shift shows up in the cached disparity plane
    disp_px = w.precomputed["disparity"][0, 64:-64, 64:-64, 0] * 16
    assert abs(np.median(disp_px[disp_px > 0]) - 8) <= 1.0

    ckpt = tmp_path / "ckpt"
    cfg = ModelConfig(modalities=("video", "flow", "disparity", "eye", "head"),
                      task="classification", timestep=8, frame_size=256,
                      conv3d_filters=(2, 2), td_filters=2, lstm_hidden=2,
                      branch_dense=2, fusion_dense=4, max_disparity=16)
    save_model(ckpt, build_model(cfg, seed=1))

    pred_csv = tmp_path / "preds.csv"
    code = main(["predict", "--checkpoint", str(ckpt), "--cache", str(cache),
                 "--out", str(pred_csv)])
    assert code == 0
    with open(pred_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert rows[0]["prediction"] in ("None", "Low", "Medium", "High")
