import shutil
from pathlib import Path

import matplotlib
import pytest

from pkmspc.errors import InputError
from pkmspc.plots import CHART_COLUMNS, plot_chart, plot_contributions, read_chart

DATA = Path(__file__).parent / "data"

# The fixtures were rendered once with this matplotlib line; other releases
# may legitimately lay out the SVG differently.
GOLDEN_MPL = "3.10"


def chart_file(path, rows):
    lines = [",".join(CHART_COLUMNS)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


class TestChart:
    def test_zero_width_band_still_draws_line(self, tmp_path):
        src = chart_file(tmp_path / "c.csv", [[t, v, v, v, v, 2.0, 2.0, 2.0] for t, v in enumerate([1.0, 3.0, 1.5])])
        out = plot_chart(src, tmp_path / "c.svg")
        text = out.read_text()
        assert text.startswith("<?xml")
        assert 'id="line2d_' in text

    def test_empty_file(self, tmp_path):
        src = tmp_path / "e.csv"
        src.write_text("")
        with pytest.raises(InputError):
            plot_chart(src, tmp_path / "e.svg")

    def test_header_only(self, tmp_path):
        src = chart_file(tmp_path / "h.csv", [])
        with pytest.raises(InputError):
            plot_chart(src, tmp_path / "h.svg")

    def test_wrong_header(self, tmp_path):
        src = tmp_path / "w.csv"
        src.write_text("time,value\n0,1\n")
        with pytest.raises(InputError):
            read_chart(src)

    def test_non_numeric(self, tmp_path):
        src = chart_file(tmp_path / "n.csv", [[0, "x", 1, 1, 1, 1, 1, 1]])
        with pytest.raises(InputError):
            read_chart(src)

    def test_missing(self, tmp_path):
        with pytest.raises(InputError):
            plot_chart(tmp_path / "none.csv", tmp_path / "none.svg")

    def test_repeatable(self, tmp_path):
        a = plot_chart(DATA / "tiny_chart.csv", tmp_path / "a.svg", title="tiny", ylabel="T2")
        b = plot_chart(DATA / "tiny_chart.csv", tmp_path / "b.svg", title="tiny", ylabel="T2")
        assert a.read_bytes() == b.read_bytes()
        assert b"Date" not in a.read_bytes()

    @pytest.mark.skipif(not matplotlib.__version__.startswith(GOLDEN_MPL), reason="golden rendered with another matplotlib")
    def test_golden(self, tmp_path):
        out = plot_chart(DATA / "tiny_chart.csv", tmp_path / "c.svg", title="tiny", ylabel="T2")
        assert out.read_bytes() == (DATA / "tiny_chart.svg").read_bytes()


class TestContributions:
    def test_repeatable_after_copy(self, tmp_path):
        # output depends on file content only, not on its location
        shutil.copy(DATA / "tiny_contrib.csv", tmp_path / "moved.csv")
        a = plot_contributions(DATA / "tiny_contrib.csv", tmp_path / "a.svg")
        b = plot_contributions(tmp_path / "moved.csv", tmp_path / "b.svg")
        assert a.read_bytes() == b.read_bytes()

    def test_malformed(self, tmp_path):
        src = tmp_path / "m.csv"
        src.write_text("time,variable,mean,lower,upper\n4,x1,abc,0,1\n")
        with pytest.raises(InputError):
            plot_contributions(src, tmp_path / "m.svg")

    @pytest.mark.skipif(not matplotlib.__version__.startswith(GOLDEN_MPL), reason="golden rendered with another matplotlib")
    def test_golden(self, tmp_path):
        out = plot_contributions(DATA / "tiny_contrib.csv", tmp_path / "c.svg")
        assert out.read_bytes() == (DATA / "tiny_contrib.svg").read_bytes()
