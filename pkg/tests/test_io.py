import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxbound import fixtures
from maxbound.core import (
    FlooredLinear,
    Identity,
    IndicatorThreshold,
    Linear,
    PiecewiseLinear,
    Power,
    Tabulated,
    TimeGrid,
)
from maxbound.io import (
    FormatError,
    dump_ensemble,
    dump_table,
    fmt,
    parse_boundary,
    parse_phi,
    parse_scan,
    read_ensemble,
    read_table,
    write_ensemble,
)


class TestEnsembleFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        ens = fixtures.jump_submartingale(TimeGrid.uniform(3), 1.3, 500, seed=9)
        path = tmp_path / "e.csv"
        write_ensemble(str(path), ens)
        back = read_ensemble(str(path))
        np.testing.assert_array_equal(back.x, ens.x)
        np.testing.assert_array_equal(back.s, ens.s)
        assert back.seed == 9 and back.x0 == 1.3 and back.n == 3

    def test_header(self):
        text = dump_ensemble(fixtures.constant(2.0, 1, 2))
        lines = text.splitlines()
        assert lines[0] == "# maxbound-ensemble v1 seed=0 n=1 x0=2"
        assert lines[1] == "x_0,x_1,s_0,s_1"
        assert len(lines) == 4

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x_0,x_1\n1,1\n")
        with pytest.raises(FormatError):
            read_ensemble(str(path))

    def test_column_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# maxbound-ensemble v1 seed=1 n=2 x0=1\nx_0,x_1,s_0,s_1\n1,1,1,1\n")
        with pytest.raises(FormatError):
            read_ensemble(str(path))

    def test_start_disagrees_with_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# maxbound-ensemble v1 seed=1 n=1 x0=1\nx_0,x_1,s_0,s_1\n2,2,2,2\n")
        with pytest.raises(FormatError):
            read_ensemble(str(path))

    def test_garbage_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# maxbound-ensemble v1 seed=1 n=1 x0=1\nx_0,x_1,s_0,s_1\n1,abc,1,1\n")
        with pytest.raises(FormatError):
            read_ensemble(str(path))


class TestTables:
    @settings(max_examples=200)
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_seventeen_digits_round_trip(self, v):
        assert float(fmt(v)) == v

    def test_int_and_bool_cells(self):
        assert fmt(3) == "3"
        assert fmt(np.bool_(True)) == "1"
        assert fmt("total") == "total"

    def test_dump_and_read(self):
        text = dump_table(("m", "ub"), [("total", 0.1), (2.0, 1 / 3)])
        rows = read_table(text)
        assert rows[0]["m"] == "total"
        assert float(rows[1]["ub"]) == 1 / 3
        assert "\r" not in text


class TestSyntax:
    def test_boundaries(self):
        assert parse_boundary("linear:0.5") == Linear(0.5)
        assert parse_boundary("floored:0.5:1.2") == FlooredLinear(0.5, 1.2)
        b = parse_boundary("pwl:1:0.3,2:0.9,4:2")
        assert isinstance(b, PiecewiseLinear)
        assert b(3.0) == pytest.approx(1.45)

    def test_payoffs(self):
        assert parse_phi("power:2") == Power(2.0)
        assert isinstance(parse_phi("identity"), Identity)
        assert parse_phi("indicator:1.5") == IndicatorThreshold(1.5)
        assert isinstance(parse_phi("tab:1:0,2:1"), Tabulated)

    @pytest.mark.parametrize("text", ["cubic:1", "linear:x", "floored:0.5", "pwl:", "pwl:1:2:3"])
    def test_bad_boundary(self, text):
        with pytest.raises(FormatError):
            parse_boundary(text)

    @pytest.mark.parametrize("text", ["power:", "exp:1", "tab:1"])
    def test_bad_phi(self, text):
        with pytest.raises(FormatError):
            parse_phi(text)

    def test_scan(self):
        m = parse_scan("1:4:3")
        np.testing.assert_allclose(m, [1, 2, 4])
        with pytest.raises(FormatError):
            parse_scan("2:1:5")
        with pytest.raises(FormatError):
            parse_scan("1:2")
