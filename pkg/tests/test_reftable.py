import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from abcf.reftable import (
    QueryPoint,
    ReferenceTable,
    TableError,
    add_noise_columns,
    read_csv,
    split,
    write_csv,
)


def small_table(n=5):
    rng = np.random.default_rng(0)
    return ReferenceTable(("a", "b"), ("s1", "s2", "s3"), rng.normal(size=(n, 2)), rng.normal(size=(n, 3)))


def test_table_is_read_only():
    t = small_table()
    with pytest.raises(ValueError):
        t.params[0, 0] = 1.0


def test_table_validation():
    with pytest.raises(TableError):
        ReferenceTable(("a",), ("s",), np.zeros((2, 1)), np.zeros((3, 1)))
    with pytest.raises(TableError):
        ReferenceTable(("a", "a"), ("s",), np.zeros((2, 2)), np.zeros((2, 1)))
    with pytest.raises(TableError, match="row 1"):
        ReferenceTable(("a",), ("s",), np.zeros((2, 1)), np.array([[0.0], [np.nan]]))
    with pytest.raises(TableError):
        ReferenceTable(("a",), ("s",), np.zeros((0, 1)), np.zeros((0, 1)))


def test_column_access():
    t = small_table()
    np.testing.assert_array_equal(t.param("b"), t.params[:, 1])
    np.testing.assert_array_equal(t.stat("s3"), t.stats[:, 2])
    with pytest.raises(KeyError, match="nope"):
        t.param("nope")


finite = st.floats(allow_nan=False, allow_infinity=False, allow_subnormal=True, width=64)


@given(data=hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 5)), elements=finite))
@settings(max_examples=60, deadline=None)
def test_csv_round_trip_is_exact(tmp_path_factory, data):
    t = ReferenceTable(("p",), tuple(f"s{i}" for i in range(data.shape[1] - 1)), data[:, :1], data[:, 1:])
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    write_csv(t, path)
    back = read_csv(path)
    assert back == t
    assert back.stats.tobytes() == t.stats.tobytes()


def test_csv_round_trip_subnormals_and_extremes(tmp_path):
    vals = np.array([[5e-324, -2.2250738585072014e-308, 1.7976931348623157e308, -0.0]])
    t = ReferenceTable(("p",), ("s1", "s2", "s3"), vals[:, :1], vals[:, 1:])
    write_csv(t, tmp_path / "x.csv")
    assert read_csv(tmp_path / "x.csv").params.tobytes() == t.params.tobytes()


@pytest.mark.parametrize(
    "body, match",
    [
        ("param:a,stat:s\n1,2\n3\n", "row 2"),
        ("param:a,stat:s\n1,x\n", "column 'stat:s'"),
        ("param:a,stat:s\n1,nan\n", "non-finite"),
        ("param:a,s\n1,2\n", "prefix"),
        ("", "header"),
        ("param:a,stat:s\n", "no data"),
    ],
)
def test_csv_errors_name_the_location(tmp_path, body, match):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(TableError, match=match):
        read_csv(path)


def test_split_preserves_order_and_partitions():
    t = small_table(20)
    train, test = split(t, 5, seed=1)
    assert len(train) == 15 and len(test) == 5
    rows = {tuple(r) for r in t.params}
    assert {tuple(r) for r in train.params} | {tuple(r) for r in test.params} == rows
    # original relative order is kept on both sides
    idx = [int(np.flatnonzero((t.params == r).all(axis=1))[0]) for r in test.params]
    assert idx == sorted(idx)
    assert split(t, 5, seed=1)[1] == test
    with pytest.raises(ValueError):
        split(t, 20, seed=0)


def test_add_noise_columns():
    t = small_table(50)
    noisy = add_noise_columns(t, 3, seed=2)
    assert noisy.stat_names[-3:] == ("noise0", "noise1", "noise2")
    assert noisy.stats[:, 3:].min() >= 0 and noisy.stats[:, 3:].max() < 1
    again = add_noise_columns(noisy, 2, seed=3)
    assert again.stat_names[-2:] == ("noise3", "noise4")


def test_query_point_validation():
    q = QueryPoint([1.0, 2.0], ("a", "b"))
    assert len(q) == 2
    with pytest.raises(TableError):
        QueryPoint([1.0, np.inf])
    with pytest.raises(TableError):
        QueryPoint([1.0], ("a", "b"))
