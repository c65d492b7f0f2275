import numpy as np
import pytest

from undercount import Dataset, IngestError, load_csv, write_csv
from undercount.data import CSV_COLUMNS

from conftest import make_record

HEADER = ",".join(CSV_COLUMNS)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_roundtrip_is_exact(tmp_path, tiny_dataset):
    out = tmp_path / "data.csv"
    write_csv(tiny_dataset, out)
    loaded, report = load_csv(out)
    assert loaded.records == tiny_dataset.records
    assert report.n_records == 6
    assert report.n_schools == 3
    assert report.year_min == 2015 and report.year_max == 2016


def test_roundtrip_preserves_float_covariates(tmp_path):
    rec = make_record(frac_women=0.1 + 0.2, pell_frac=1.0 / 3.0)
    out = tmp_path / "data.csv"
    write_csv(Dataset.from_records([rec]), out)
    loaded, _ = load_csv(out)
    assert loaded.records[0].frac_women == rec.frac_women
    assert loaded.records[0].pell_frac == rec.pell_frac


def test_missing_column_is_fatal(tmp_path):
    bad = write_lines(tmp_path / "bad.csv", [
        HEADER.replace("pell_frac,", ""),
        "A,2015,1,1,1000,0.5,0,0",
    ])
    with pytest.raises(IngestError, match="missing required columns: pell_frac"):
        load_csv(bad)


def test_unknown_column_is_fatal(tmp_path):
    bad = write_lines(tmp_path / "bad.csv", [
        HEADER + ",extra",
        "A,2015,1,1,1000,0.5,0.3,0,0,9",
    ])
    with pytest.raises(IngestError, match="unknown columns: extra"):
        load_csv(bad)


def test_bad_rows_are_reported_with_row_numbers(tmp_path):
    bad = write_lines(tmp_path / "bad.csv", [
        HEADER,
        "A,2015,1,1,1000,0.5,0.3,0,0",      # fine
        "B,2015,-2,1,1000,0.5,0.3,0,0",     # negative count (row 3)
        "C,2015,1,7,1000,0.5,0.3,0,0",      # bad urbanization (row 4)
        "D,2015,1,1,1000,1.5,0.3,0,0",      # frac_women out of range (row 5)
        "E,2015,x,1,1000,0.5,0.3,0,0",      # non-numeric count (row 6)
    ])
    with pytest.raises(IngestError) as err:
        load_csv(bad)
    msg = str(err.value)
    assert "4 problem(s)" in msg
    assert "row 3" in msg and "reported" in msg
    assert "row 4" in msg and "urbanization" in msg
    assert "row 5" in msg and "frac_women" in msg
    assert "row 6" in msg and "not numeric" in msg


def test_duplicate_school_year_is_fatal(tmp_path):
    bad = write_lines(tmp_path / "bad.csv", [
        HEADER,
        "A,2015,1,1,1000,0.5,0.3,0,0",
        "A,2015,2,1,1000,0.5,0.3,0,0",
    ])
    with pytest.raises(IngestError, match="duplicate"):
        load_csv(bad)


def test_empty_file_is_fatal(tmp_path):
    bad = write_lines(tmp_path / "bad.csv", [HEADER])
    with pytest.raises(IngestError, match="no data rows"):
        load_csv(bad)


def test_pell_centering_uses_dataset_median():
    records = [
        make_record("A", 2015, pell_frac=0.2),
        make_record("B", 2015, pell_frac=0.36),
        make_record("C", 2015, pell_frac=0.5),
    ]
    data = Dataset.from_records(records)
    assert data.pell_median == pytest.approx(0.36)
    np.testing.assert_allclose(data.w4, [-0.16, 0.0, 0.14], atol=1e-15)


def test_pell_median_can_be_pinned():
    data = Dataset.from_records([make_record(pell_frac=0.5)], pell_median=0.3)
    assert data.w4[0] == pytest.approx(0.2)


def test_derived_covariates(tiny_dataset):
    d = tiny_dataset
    np.testing.assert_allclose(d.v2, np.log(d.students))
    np.testing.assert_allclose(d.v3, (d.frac_women - 0.5) ** 2)
    np.testing.assert_allclose(d.w3, d.frac_women - 0.5)
    assert d.w1.tolist() == [0, 0, 1, 0, 0, 0]
    assert d.w2.tolist() == [0, 0, 0, 0, 1, 1]


def test_school_indexing_is_first_appearance_order(tiny_dataset):
    assert tiny_dataset.school_ids == ("A", "B", "C")
    assert tiny_dataset.school_idx.tolist() == [0, 0, 1, 1, 2, 2]
    assert tiny_dataset.record_index("B", 2016) == 3
    with pytest.raises(KeyError):
        tiny_dataset.record_index("Z", 2015)


def test_record_validation_messages():
    rec = make_record(reported=-1, urbanization=9, students=0,
                      frac_women=1.2, assoc_only=2)
    msgs = "\n".join(rec.problems())
    for frag in ("reported", "urbanization", "students", "frac_women", "assoc_only"):
        assert frag in msgs


def test_dataset_rejects_duplicates_directly():
    with pytest.raises(ValueError, match="duplicate"):
        Dataset.from_records([make_record("A", 2015), make_record("A", 2015)])


def test_dataset_rejects_empty():
    with pytest.raises(ValueError):
        Dataset.from_records([])
