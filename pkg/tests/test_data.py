import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfpca.data import (DataFormatError, DataParseError, DataValidationError, DegenerateDataError,
                        from_records, load_csv, rescale_time, standardize, unstandardize, write_csv)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadCsv:
    def test_groups_in_order_of_first_appearance(self, tmp_path):
        p = _write(tmp_path, "subject_id,time,value\nb,1,2\na,0,1\nb,0,3\n")
        d = load_csv(p)
        assert d.subject_ids == ["b", "a"]
        np.testing.assert_array_equal(d.subject("b").times, [0.0, 1.0])
        np.testing.assert_array_equal(d.subject("b").values, [3.0, 2.0])

    def test_column_order_is_free(self, tmp_path):
        p = _write(tmp_path, "value,subject_id,time\n5,x,2\n")
        assert load_csv(p).triples() == [("x", 2.0, 5.0)]

    def test_missing_column(self, tmp_path):
        with pytest.raises(DataFormatError, match="value"):
            load_csv(_write(tmp_path, "subject_id,time\na,1\n"))

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_csv(_write(tmp_path, ""))

    def test_unparseable_value_reports_row(self, tmp_path):
        with pytest.raises(DataParseError, match="row 3"):
            load_csv(_write(tmp_path, "subject_id,time,value\na,0,1\na,1,abc\n"))

    def test_nan_rejected(self, tmp_path):
        with pytest.raises(DataParseError):
            load_csv(_write(tmp_path, "subject_id,time,value\na,0,nan\n"))

    def test_duplicate_time(self, tmp_path):
        with pytest.raises(DataValidationError, match="duplicate"):
            load_csv(_write(tmp_path, "subject_id,time,value\na,0,1\na,0,2\n"))

    def test_roundtrip(self, tmp_path, small_data):
        p = tmp_path / "rt.csv"
        write_csv(small_data, p)
        assert load_csv(p).triples() == small_data.triples()


class TestStandardize:
    def test_pooled_moments(self, small_data):
        d, s = standardize(small_data)
        y = d.all_values()
        assert abs(y.mean()) < 1e-12
        assert abs(y.std(ddof=1) - 1) < 1e-12
        assert s.applied

    def test_constant_outcome(self):
        d = from_records([("a", 0, 2.0), ("a", 1, 2.0)])
        with pytest.raises(DegenerateDataError):
            standardize(d)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
    def test_inverse_is_identity(self, values):
        if np.ptp(values) < 1e-6:
            return
        d = from_records([("a" if j % 2 else "b", float(j), v) for j, v in enumerate(values)])
        back = unstandardize(standardize(d)[0])
        np.testing.assert_allclose(back.all_values(), d.all_values(), rtol=0, atol=1e-10)


class TestRescaleTime:
    def test_weeks_example(self):
        d = from_records([("a", 0, 1.0), ("a", 4.5, 2.0), ("b", 9, 3.0)])
        r = rescale_time(d)
        np.testing.assert_allclose(r.all_times(), [0.0, 0.5, 1.0])
        assert r.time_scale.inverse(0.5) == 4.5

    def test_unit_interval_unchanged(self):
        d = from_records([("a", 0, 1.0), ("a", 0.3, 2.0), ("b", 1, 3.0)])
        np.testing.assert_array_equal(rescale_time(d, (0, 1)).all_times(), d.all_times())

    def test_single_time_is_degenerate(self):
        d = from_records([("a", 3, 1.0), ("b", 3, 2.0)])
        with pytest.raises(DegenerateDataError):
            rescale_time(d)

    def test_explicit_range_must_contain_data(self):
        d = from_records([("a", 0, 1.0), ("a", 2, 2.0)])
        with pytest.raises(DataValidationError):
            rescale_time(d, (0, 1))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcd"), st.integers(0, 50), st.floats(-10, 10)),
                min_size=1, max_size=40, unique_by=lambda r: (r[0], r[1])))
def test_grouping_preserves_triples(records):
    d = from_records(records)
    expected = sorted((s, float(t), float(v)) for s, t, v in records)
    assert sorted(d.triples()) == expected


def test_drop_and_lookup(small_data):
    smaller = small_data.drop("s0")
    assert smaller.n_subjects == small_data.n_subjects - 1
    with pytest.raises(KeyError):
        smaller.subject("s0")
    with pytest.raises(KeyError):
        smaller.drop("s0")
