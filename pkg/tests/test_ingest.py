"""Session parsing, validation, and stream alignment."""

import numpy as np
import pytest

from sickfuse.errors import (EmptyError, GapError, MissingStream, OrderError,
                             ParseError)
from sickfuse.ingest import (EYE_HEADER, FMS_HEADER, HEAD_HEADER, FRAME_MAGIC,
                             SessionRecord, Stream, align_streams,
                             empty_frame_stream, parse_session, write_session)


def write_minimal_session(dirpath, eye_rows, head_rows=None, fms_rows=None):
    dirpath.mkdir(parents=True, exist_ok=True)
    (dirpath / "eye.csv").write_text(
        EYE_HEADER + "\n" + "".join(",".join(map(str, r)) + "\n" for r in eye_rows))
    head_rows = head_rows if head_rows is not None else \
        [[r[0], 0.0, 0.0, 0.0, 1.0] for r in eye_rows]
    (dirpath / "head.csv").write_text(
        HEAD_HEADER + "\n" + "".join(",".join(map(str, r)) + "\n" for r in head_rows))
    fms_rows = fms_rows if fms_rows is not None else [[30.0, 2.0]]
    (dirpath / "fms.csv").write_text(
        FMS_HEADER + "\n" + "".join(",".join(map(str, r)) + "\n" for r in fms_rows))
    (dirpath / "frames.bin").write_bytes(FRAME_MAGIC)
    (dirpath / "frames.idx").write_text("")


VALID_EYE = [3.1, 3.2, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 900.0]


class TestParse:
    def test_three_row_fixture_parses_all_valid(self, tmp_path):
        d = tmp_path / "P01" / "BeachCity"
        rows = [[t, *VALID_EYE] for t in (0.0, 0.05, 0.1)]
        write_minimal_session(d, rows)
        record = parse_session(d)
        assert record.participant_id == "P01"
        assert record.simulation == "BeachCity"
        assert len(record.eye) == 3
        assert record.eye.valid.all()
        assert not record.has_frames

    def test_zero_gaze_vector_flagged_invalid_but_parses(self, tmp_path):
        d = tmp_path / "P01" / "RoadSide"
        bad = [0.05, 3.1, 3.2, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 900.0]
        rows = [[0.0, *VALID_EYE], bad, [0.1, *VALID_EYE]]
        write_minimal_session(d, rows)
        record = parse_session(d)
        assert list(record.eye.valid) == [True, False, True]

    def test_fms_score_eleven_rejected(self, tmp_path):
        d = tmp_path / "P01" / "SeaVoyage"
        write_minimal_session(d, [[0.0, *VALID_EYE]], fms_rows=[[30.0, 11.0]])
        with pytest.raises(ParseError):
            parse_session(d)

    def test_fms_time_must_be_multiple_of_30(self, tmp_path):
        d = tmp_path / "P01" / "SeaVoyage"
        write_minimal_session(d, [[0.0, *VALID_EYE]], fms_rows=[[31.0, 2.0]])
        with pytest.raises(ParseError):
            parse_session(d)

    def test_missing_stream(self, tmp_path):
        d = tmp_path / "P01" / "BeachCity"
        write_minimal_session(d, [[0.0, *VALID_EYE]])
        (d / "head.csv").unlink()
        with pytest.raises(MissingStream):
            parse_session(d)

    def test_non_monotonic_timestamps_rejected(self, tmp_path):
        d = tmp_path / "P01" / "BeachCity"
        rows = [[0.0, *VALID_EYE], [0.1, *VALID_EYE], [0.05, *VALID_EYE]]
        write_minimal_session(d, rows)
        with pytest.raises(OrderError):
            parse_session(d)

    def test_malformed_row_reports_line_number(self, tmp_path):
        d = tmp_path / "P01" / "BeachCity"
        write_minimal_session(d, [[0.0, *VALID_EYE]])
        with open(d / "eye.csv", "a") as fh:
            fh.write("0.05,oops,3.2,0,0,1,0,0,1,900\n")
        with pytest.raises(ParseError) as err:
            parse_session(d)
        assert err.value.line == 3

    def test_pupil_out_of_range_flagged(self, tmp_path):
        d = tmp_path / "P01" / "BeachCity"
        bad = [0.05, 13.0, 3.2, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 900.0]
        write_minimal_session(d, [[0.0, *VALID_EYE], bad])
        record = parse_session(d)
        assert list(record.eye.valid) == [True, False]


def grid_session(n=101, rate=20, jitter=0.0, valid=None):
    rng = np.random.default_rng(5)
    t = np.arange(n) / rate
    if jitter:
        t = t + rng.uniform(-jitter, jitter, size=n)
        t[0] = abs(t[0])
        t = np.sort(t)
    eye = np.column_stack([np.full(n, 3.0), np.full(n, 3.0),
                           np.zeros(n), np.zeros(n), np.ones(n),
                           np.zeros(n), np.zeros(n), np.ones(n),
                           np.full(n, 900.0)])
    eye[:, 0] = np.arange(n)  # counter for snap checks
    head = np.column_stack([np.zeros(n), np.zeros(n), np.zeros(n), np.ones(n)])
    return SessionRecord(
        "P01", "BeachCity",
        Stream(t.copy(), eye, np.ones(n, bool) if valid is None else valid),
        Stream(t.copy(), head.copy(), np.ones(n, bool)),
        empty_frame_stream(), np.zeros((0, 2)), rate_hz=rate)


class TestAlign:
    def test_exact_grid_input_is_identity(self):
        session = grid_session()
        aligned = align_streams(session)
        assert np.array_equal(aligned.eye.t, session.eye.t)
        assert np.array_equal(aligned.eye.values, session.eye.values)
        assert aligned.eye.valid.all()

    def test_expected_sample_count(self):
        aligned = align_streams(grid_session(n=201))
        assert len(aligned.eye) == 10 * 20 + 1
        assert len(aligned.head) == len(aligned.eye)

    def test_jittered_samples_snap_to_nearest(self):
        session = grid_session(jitter=0.010)
        aligned = align_streams(session)
        # nearest-neighbor oracle over the jittered fixture
        for k in range(len(aligned.eye)):
            expect = np.argmin(np.abs(session.eye.t - k / 20))
            assert aligned.eye.values[k, 0] == session.eye.values[expect, 0]

    def test_one_second_gap_raises_gap_error(self):
        session = grid_session(n=101)
        mask = np.ones(101, bool)
        mask[40:61] = False  # 2.0 s .. 3.0 s invalid
        session.eye.valid[:] = mask
        with pytest.raises(GapError) as err:
            align_streams(session)
        start, end = err.value.interval
        assert start == pytest.approx(2.0)
        assert end == pytest.approx(3.05, abs=0.051)

    def test_short_dropout_held_from_last_valid(self):
        session = grid_session(n=101)
        session.eye.valid[50:53] = False
        aligned = align_streams(session)
        assert not aligned.eye.valid[50:53].any()
        assert np.all(aligned.eye.values[50:53, 0] == 49)
        assert aligned.invalid_counts["eye"] == 3

    def test_alignment_is_idempotent(self):
        session = grid_session(jitter=0.008)
        session.eye.valid[30:32] = False
        once = align_streams(session)
        twice = align_streams(once)
        assert np.array_equal(once.eye.t, twice.eye.t)
        assert np.array_equal(once.eye.values, twice.eye.values)
        assert np.array_equal(once.eye.valid, twice.eye.valid)
        assert np.array_equal(once.head.values, twice.head.values)

    def test_empty_stream_rejected(self):
        session = grid_session()
        session.eye.t = np.zeros(0)
        session.eye.values = np.zeros((0, 9))
        session.eye.valid = np.zeros(0, bool)
        session.eye = Stream(session.eye.t, session.eye.values, session.eye.valid)
        with pytest.raises(EmptyError):
            align_streams(session)


class TestRoundTrip:
    def test_parse_serialize_parse_identical(self, tmp_path):
        d = tmp_path / "P03" / "SeaVoyage"
        rows = [[t, *VALID_EYE] for t in (0.0, 0.05, 0.1, 0.15)]
        write_minimal_session(d, rows, fms_rows=[[30.0, 2.0], [60.0, 3.0]])
        first = parse_session(d)
        out = tmp_path / "copy" / "P03" / "SeaVoyage"
        write_session(first, out)
        second = parse_session(out)
        assert np.array_equal(first.eye.t, second.eye.t)
        assert np.array_equal(first.eye.values, second.eye.values)
        assert np.array_equal(first.head.values, second.head.values)
        assert np.array_equal(first.reports, second.reports)
        assert not second.has_frames
