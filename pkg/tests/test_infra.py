import csv
import io
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import binomtest

from majchain import rng
from majchain.io import dumps_csv, dumps_json, write_csv, write_json
from majchain.stats import batch_means, mean_ci, wilson
from majchain.svg import heat_map, line_chart


@given(lo=st.integers(-10000, 10000), span=st.integers(0, 9000), sub=st.data())
def test_positional_bits_independent_of_window(lo, span, sub):
    hi = lo + span
    a = rng.positional_bits(lo, hi, 7, rng.ENV)
    s = sub.draw(st.integers(lo, hi))
    e = sub.draw(st.integers(s, hi))
    assert np.array_equal(a[s - lo:e - lo + 1], rng.positional_bits(s, e, 7, rng.ENV))


def test_replica_uniforms_consistent():
    full = rng.replica_uniforms(3, (rng.PATH,), 0, 1024, -300, 600)
    part = rng.replica_uniforms(3, (rng.PATH,), 0, 10, 100, 200)
    assert np.array_equal(full[:10, 400:501], part)
    assert np.all((full > 0) & (full <= 1))
    with pytest.raises(ValueError):
        rng.replica_uniforms(3, (1,), 0, 2000, 0, 1)
    other = rng.replica_uniforms(3, (rng.PATH,), 1, 10, 100, 200)
    assert not np.array_equal(other, part)


def test_run_batches_thread_invariant():
    fn = lambda b, s, e: rng.generator(1, b).random(e - s)
    one = np.concatenate(rng.run_batches(fn, 5000, 1))
    four = np.concatenate(rng.run_batches(fn, 5000, 4))
    assert np.array_equal(one, four) and one.size == 5000
    assert rng.batches(5, 2) == [(0, 0, 2), (1, 2, 4), (2, 4, 5)]
    with pytest.raises(ValueError):
        rng.generator(-1)
    assert rng.seed_record(4, (1, 2)) == {"seed": 4, "key": [1, 2]}


def test_wilson_matches_scipy():
    iv = wilson(37, 200)
    ref = binomtest(37, 200).proportion_ci(0.95, method="wilson")
    assert (iv.lo, iv.hi) == pytest.approx((ref.low, ref.high), rel=1e-9)
    assert wilson(0, 10).lo == 0.0
    with pytest.raises(ValueError):
        wilson(0, 0)


def test_mean_and_batch_means():
    x = np.random.default_rng(0).normal(2.0, 1.0, 10000)
    iv = mean_ci(x)
    assert iv.lo < 2.0 < iv.hi and iv.n == 10000
    assert batch_means(x).se == pytest.approx(iv.se, rel=0.3)
    with pytest.raises(ValueError):
        mean_ci([1.0])


def test_csv_rfc4180():
    rows = [{"a": 1, "b": 0.1, "c": "x,y"}, {"a": np.int64(2), "b": np.float64(1e-300), "c": True, "d": None}]
    text = dumps_csv(rows)
    assert text.endswith("\r\n") and "\r\n" in text.split("\n")[0] + "\n"
    back = list(csv.DictReader(io.StringIO(text)))
    assert back[0]["c"] == "x,y" and back[1]["b"] == "1e-300" and back[1]["c"] == "true"
    assert float(back[0]["b"]) == 0.1
    assert list(back[0]) == ["a", "b", "c", "d"]


def test_json_plain(tmp_path):
    obj = {"x": np.arange(3), "y": np.float32(0.5), "z": float("nan"), 3: (True,)}
    text = dumps_json(obj)
    assert json.loads(text) == {"x": [0, 1, 2], "y": 0.5, "z": "nan", "3": [True]}
    write_json(tmp_path / "a.json", obj)
    write_csv(tmp_path / "a.csv", [{"k": 1}])
    assert (tmp_path / "a.json").read_text() == text
    assert (tmp_path / "a.csv").read_bytes() == b"k\r\n1\r\n"


def test_svg_well_formed():
    svg = line_chart({"a": ([1, 2, 3], [0.1, 0.5, 0.2]), "b": ([1, 3], [1.0, -1.0])}, "t", "x", "y")
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert svg.count("<polyline") == 2
    hm = heat_map([[0.1, 0.2], [0.3, float("nan")]], [1, 2], [3, 4], "h", "x", "y")
    ET.fromstring(hm)
    assert line_chart({"a": ([1, 2], [0.0, 0.0])}, "t", "x", "y") == \
        line_chart({"a": ([1, 2], [0.0, 0.0])}, "t", "x", "y")
