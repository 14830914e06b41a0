import pytest

from difflearn_plot.records import (
    PlotError,
    SchemaVersionMismatchError,
    Series,
    load_series,
)

RECORD = """#difflearn-record v1
#fingerprint=0123456789abcdef
#seed=0
epoch,agent,accuracy,loss,params_sent
0,0,0.1,2.3,0
0,1,0.3,2.2,0
1,0,0.5,1.1,100
1,1,0.7,1.0,100
"""

AGGREGATE = """#difflearn-aggregate v1
#fingerprint=0123456789abcdef
#repetitions=3
epoch,mean_accuracy,std_accuracy
0,0.2,0.01
1,0.6,0.02
"""


def write(tmp_path, text, name="input.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestRecordFiles:
    def test_mean_over_agents(self, tmp_path):
        series = load_series(write(tmp_path, RECORD))
        assert series.epochs == (0, 1)
        assert series.mean == pytest.approx((0.2, 0.6))
        assert series.std is None

    def test_epochs_sorted_regardless_of_row_order(self, tmp_path):
        lines = RECORD.splitlines()
        shuffled = "\n".join(lines[:4] + [lines[6], lines[4], lines[7], lines[5]]) + "\n"
        series = load_series(write(tmp_path, shuffled))
        assert series.epochs == (0, 1)
        assert series.mean == pytest.approx((0.2, 0.6))

    def test_full_float_precision(self, tmp_path):
        text = RECORD.replace("0.1,2.3", "0.1000000000000001,2.3")
        series = load_series(write(tmp_path, text))
        assert series.mean[0] == (0.1000000000000001 + 0.3) / 2


class TestAggregateFiles:
    def test_mean_and_band(self, tmp_path):
        series = load_series(write(tmp_path, AGGREGATE))
        assert series.epochs == (0, 1)
        assert series.mean == pytest.approx((0.2, 0.6))
        assert series.std == pytest.approx((0.01, 0.02))


class TestRejection:
    def test_unknown_header(self, tmp_path):
        path = write(tmp_path, "#difflearn-record v2\nepoch\n0\n")
        with pytest.raises(SchemaVersionMismatchError):
            load_series(path)

    def test_plain_csv(self, tmp_path):
        path = write(tmp_path, "epoch,accuracy\n0,0.5\n")
        with pytest.raises(SchemaVersionMismatchError):
            load_series(path)

    def test_empty_file(self, tmp_path):
        with pytest.raises(SchemaVersionMismatchError):
            load_series(write(tmp_path, ""))

    def test_wrong_columns(self, tmp_path):
        text = RECORD.replace("epoch,agent,accuracy,loss,params_sent", "epoch,accuracy")
        with pytest.raises(SchemaVersionMismatchError):
            load_series(write(tmp_path, text))

    def test_short_row(self, tmp_path):
        with pytest.raises(PlotError, match="line 3"):
            load_series(write(tmp_path, RECORD.replace("0,1,0.3,2.2,0", "0,1,0.3")))

    def test_non_numeric_row(self, tmp_path):
        with pytest.raises(PlotError):
            load_series(write(tmp_path, RECORD.replace("0.3", "zebra")))

    def test_no_data_rows(self, tmp_path):
        header_only = "\n".join(RECORD.splitlines()[:4]) + "\n"
        with pytest.raises(PlotError, match="no data"):
            load_series(write(tmp_path, header_only))

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_series(tmp_path / "absent.csv")


class TestSeriesValidation:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Series(epochs=(0, 1), mean=(0.5,), std=None)
        with pytest.raises(ValueError):
            Series(epochs=(0, 1), mean=(0.5, 0.6), std=(0.1,))

    def test_unsorted_epochs(self):
        with pytest.raises(ValueError):
            Series(epochs=(1, 0), mean=(0.5, 0.6), std=None)
