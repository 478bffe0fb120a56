from pathlib import Path

import numpy as np
import pytest

from poolprev import io, studygen
from poolprev.domain import validate_dataset
from poolprev.summary import CurveSummary

DATA = Path(__file__).parent / "data"


@pytest.mark.parametrize(
    "name,layout", [("general", "general"), ("ideal", "ideal"), ("efficient", "efficient"), ("counts", "counts")]
)
def test_detect_and_round_trip(name, layout, tmp_path):
    path = DATA / f"{name}.csv"
    assert io.detect_layout(path) == layout
    data = io.read_observations(path)
    assert validate_dataset(data).ok
    io.write_observations(tmp_path / "out.csv", data)
    assert (tmp_path / "out.csv").read_text() == path.read_text()
    again = io.read_observations(tmp_path / "out.csv")
    assert np.array_equal(again.grid.times, data.grid.times)


def test_general_golden_values():
    data = io.read_observations(DATA / "general.csv", interval_span=20.0)
    assert list(data.grid.times) == [0.0, 12.5] and data.grid.interval_span == 20.0
    assert list(data.n_per_time) == [8, 4]
    assert list(data.layout.result) == [1, 0, 0, 1]


def test_efficient_golden_values():
    lay = io.read_observations(DATA / "efficient.csv").layout
    assert list(lay.k) == [6, 16] and list(lay.m_rem) == [2, 0]


def test_records_golden():
    recs = io.read_records(DATA / "records.csv")
    assert len(recs) == 4 and recs[1].result == 1 and recs[0].individual is None
    res, origin = studygen.aggregate_by_window(recs)
    assert list(res.grid.times) == [0.0, 19.0]
    assert res.counts().k.tolist() == [3, 1] and res.counts().y.tolist() == [1, 0]


def test_records_with_ids_dedupe():
    recs = io.read_records(DATA / "records_ids.csv")
    res, _ = studygen.aggregate_by_window(recs)
    assert res.counts().k.tolist() == [2] and res.counts().y.tolist() == [1]


def test_records_round_trip(tmp_path):
    recs = io.read_records(DATA / "records_ids.csv")
    io.write_records(tmp_path / "r.csv", recs)
    assert (tmp_path / "r.csv").read_text() == (DATA / "records_ids.csv").read_text()


@pytest.mark.parametrize(
    "name,line,fragment",
    [
        ("bad_header", 1, "unknown header"),
        ("bad_duplicate", 3, "duplicate time"),
        ("bad_number", 3, "k='fifteen'"),
    ],
)
def test_parse_errors_are_line_numbered(name, line, fragment):
    with pytest.raises(io.ParseError) as info:
        io.read_observations(DATA / f"{name}.csv")
    assert info.value.line == line and fragment in str(info.value)
    assert f"{name}.csv:{line}" in str(info.value)


def test_bad_date_line_numbered():
    with pytest.raises(io.ParseError) as info:
        io.read_records(DATA / "bad_date.csv")
    assert info.value.line == 3 and "ISO date" in str(info.value)


def test_records_file_is_not_observations():
    with pytest.raises(io.ParseError, match="aggregation"):
        io.read_observations(DATA / "records.csv")


def test_ragged_row_and_missing_file(tmp_path):
    p = tmp_path / "ragged.csv"
    p.write_text("time,k,y\n0,3\n")
    with pytest.raises(io.ParseError, match=":2:"):
        io.read_observations(p)
    with pytest.raises(io.ParseError, match="cannot read"):
        io.read_observations(tmp_path / "nope.csv")


def test_result_must_be_binary(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("site,date,result\na,2020-01-01,2\n")
    with pytest.raises(io.ParseError, match="0 or 1"):
        io.read_records(p)


def test_summary_and_truth_round_trip(tmp_path):
    s = CurveSummary(np.array([0.0, 1.5]), np.array([0.1, 0.2]), np.array([0.05, 0.1]), np.array([0.2, 0.3]))
    io.write_summary(tmp_path / "s.csv", s)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "time,median,lo95,hi95"
    back = io.read_summary(tmp_path / "s.csv")
    assert np.array_equal(back.median, s.median)
    truth, *_ = studygen.generate_synthetic(studygen.preset("study1"), 3)
    io.write_truth(tmp_path / "t.csv", truth)
    t, w, p = io.read_truth(tmp_path / "t.csv")
    assert np.array_equal(p, truth.true_p) and np.array_equal(w, truth.true_W)


def test_json_errors(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{\n  bad")
    with pytest.raises(io.ParseError):
        io.read_json(p)
    io.write_json(p, {"b": 1, "a": [1, 2]})
    assert io.read_json(p) == {"a": [1, 2], "b": 1}
