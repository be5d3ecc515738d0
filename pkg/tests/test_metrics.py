import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dagqos import NetworkConfig, Policy, run
from dagqos.engine import Stream
from dagqos.metrics import (
    NODE_SERIES_HEADER,
    TRANSACTION_HEADER,
    ExportError,
    compare_table,
    compute_histogram,
    export,
    read_csv,
    rounded,
    sending_rate_series,
    summarize,
    summarize_all,
)

SMALL = NetworkConfig(node_count=6, user_count=12, scheduling_rate=15.0, duration=120.0, warmup=10.0)


@pytest.fixture(scope="module")
def result():
    return run(SMALL.with_(policy=Policy.DBNS_PLUS, load_fraction=1.2), 9)


# ---------------------------------------------------------------- histogram

def test_histogram_binning():
    h = compute_histogram([0.5, 1.5, 1.6], 1.0)
    assert h.counts.tolist() == [1, 2]
    assert h.total == 3
    assert h.edges.tolist() == [0.0, 1.0, 2.0]
    assert h.mode() == 1.0


def test_empty_histogram():
    h = compute_histogram([], 0.25)
    assert h.total == 0 and h.counts.size == 0
    assert np.isnan(h.mode())


def test_bin_edges_are_half_open():
    h = compute_histogram([0.0, 1.0, 2.0, 2.999], 1.0)
    assert h.counts.tolist() == [1, 1, 2]


def test_histogram_rejects_bad_input():
    with pytest.raises(ValueError):
        compute_histogram([1.0], 0.0)
    with pytest.raises(ValueError):
        compute_histogram([-0.1], 1.0)


def test_histogram_mean_of_exponential_samples():
    stream = Stream(7, (99,))
    d = [stream.exponential(0.5) for _ in range(10_000)]
    h = compute_histogram(d, 0.5)
    assert h.mean() == pytest.approx(2.0, rel=0.05)
    assert float(np.sum(h.density()) * h.bin_width) == pytest.approx(1.0)


@given(st.lists(st.floats(0, 1e4), max_size=300), st.floats(1e-2, 50))
def test_histogram_mass_conservation(delays, w):
    h = compute_histogram(delays, w)
    assert int(h.counts.sum()) == h.total == len(delays)
    if delays:
        assert float(np.sum(h.density()) * w) == pytest.approx(1.0)


# ------------------------------------------------------------------ summary

def test_summary_fields(result):
    s = summarize([result])
    p = s.percentiles
    assert p["p50"] <= p["p90"] <= p["p95"] <= p["p99"]
    assert len(s.per_node_mean_delay) == len(s.traffic_share) == len(s.fees_per_node) == 6
    assert sum(s.traffic_share) == pytest.approx(1.0)
    assert s.transactions == result.delays().size
    assert 0.0 <= s.deferred_fraction <= 1.0
    json.dumps(s.to_dict())


def test_summary_rejects_mixed_groups(result):
    other = run(SMALL, 1)
    with pytest.raises(ValueError):
        summarize([result, other])


def test_compare_table_is_pure(result):
    other = run(SMALL.with_(policy=Policy.RBNS, load_fraction=1.2), 9)
    t1 = compare_table(summarize_all([result, other]))
    t2 = compare_table(summarize_all([other, result]))
    assert t1 == t2
    assert len(t1.splitlines()) == 3


def test_sending_rate_series(result):
    s = sending_rate_series(result)
    assert s["send_rate"].sum() == result.counts["created"][-1]
    assert np.mean(s["send_rate"]) == pytest.approx(18.0, rel=0.15)


# ------------------------------------------------------------------- export

def test_export_files_and_headers(tmp_path, result):
    export([result], tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["node_series.csv", "run_meta.json", "sending_rate.csv", "summary.json", "transactions.csv"]
    lines = (tmp_path / "transactions.csv").read_text().splitlines()
    assert lines[0] == ",".join(TRANSACTION_HEADER)
    assert len(lines) == result.issued + 1
    series = read_csv(tmp_path / "node_series.csv")
    assert list(series) == list(NODE_SERIES_HEADER)
    assert len(series["time"]) == result.sample_times.size * 6
    meta = json.loads((tmp_path / "run_meta.json").read_text())
    run0 = meta["runs"][0]
    assert run0["seed"] == 9 and run0["config"]["simulation"]["policy"] == "dbns-plus"
    assert run0["config_hash"] == result.config.digest()
    assert meta["version"]


def test_csv_round_trip(tmp_path, result):
    export([result], tmp_path)
    back = read_csv(tmp_path / "transactions.csv")
    for name in TRANSACTION_HEADER[2:]:
        want = result.transactions[name]
        if want.dtype.kind == "i":
            assert np.array_equal(back[name], want)
        else:
            assert np.array_equal(back[name], rounded(want))
    assert set(back["policy"]) == {"dbns-plus"}


def test_numbers_have_six_significant_digits(tmp_path, result):
    export([result], tmp_path)
    row = (tmp_path / "transactions.csv").read_text().splitlines()[-1].split(",")
    for cell in row[5:]:
        digits = cell.lstrip("-").replace(".", "").lstrip("0").split("e")[0]
        assert len(digits) <= 6


def test_rows_sorted_by_time_then_id(tmp_path, result):
    export([result], tmp_path)
    back = read_csv(tmp_path / "transactions.csv")
    key = list(zip(back["issued_at"], back["tx_id"]))
    assert key == sorted(key)


def test_export_is_byte_identical_on_rerun(tmp_path):
    cfg = SMALL.with_(policy=Policy.DBNS)
    export([run(cfg, 5)], tmp_path / "a")
    export([run(cfg, 5)], tmp_path / "b")
    for name in ("transactions.csv", "node_series.csv", "sending_rate.csv", "summary.json", "run_meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_empty_run_export(tmp_path):
    r = run(SMALL.with_(duration=0.0), 1)
    export([r], tmp_path)
    assert (tmp_path / "transactions.csv").read_text() == ",".join(TRANSACTION_HEADER) + "\n"
    assert (tmp_path / "node_series.csv").read_text() == ",".join(NODE_SERIES_HEADER) + "\n"
    summary = json.loads((tmp_path / "summary.json").read_text())["summaries"][0]
    assert summary["transactions"] == 0
    assert summary["mean_delay"] is None


def test_output_path_blocked_by_file(tmp_path, result):
    blocker = tmp_path / "taken"
    blocker.write_text("x")
    with pytest.raises(ExportError, match="taken"):
        export([result], blocker)
