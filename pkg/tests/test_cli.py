import math

import numpy as np
import pytest

from maxbound.cli import main
from maxbound.io import read_ensemble, read_table


def run(argv, capsys):
    code = main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


@pytest.fixture(scope="module")
def extremal_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("ens") / "ext.csv"
    assert main(["simulate", "--boundary", "linear:0.5", "--paths", "20000", "--seed", "42",
                 "--out", str(path)]) == 0
    return path


class TestSimulate:
    def test_row_count(self, extremal_file):
        ens = read_ensemble(str(extremal_file))
        assert ens.paths == 20000
        assert ens.seed == 42

    def test_deterministic(self, tmp_path, capsys):
        outs = []
        for k in range(2):
            path = tmp_path / f"e{k}.csv"
            code, _, _ = run(["simulate", "--boundary", "linear:0.5", "--n", 2, "--paths", 500, "--seed", 3,
                              "--out", path], capsys)
            assert code == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_tangent_boundary_rejected(self, capsys):
        # xi(m) = m at m = 2 touches the diagonal
        code, _, err = run(["simulate", "--boundary", "pwl:1:0.5,2:2,3:2.5", "--paths", 10], capsys)
        assert code == 2
        assert "diagonal" in err or "tang" in err

    def test_stage_count_mismatch(self, capsys):
        code, _, _ = run(["simulate", "--boundary", "linear:0.5", "--boundary", "linear:0.6", "--n", 3], capsys)
        assert code == 2

    @pytest.mark.parametrize("sampler", ["bridge", "jump", "two-point"])
    def test_fixture_samplers(self, sampler, capsys):
        code, out, _ = run(["simulate", "--sampler", sampler, "--n", 2, "--paths", 50, "--seed", 1], capsys)
        assert code == 0
        assert out.startswith("# maxbound-ensemble v1 seed=1")

    def test_bad_paths(self, capsys):
        code, _, _ = run(["simulate", "--boundary", "linear:0.5", "--paths", 0], capsys)
        assert code == 2


class TestBound:
    def test_scan_dominates(self, extremal_file, capsys):
        code, out, _ = run(["bound", "--ensemble", extremal_file, "--zeta", "linear:0.5",
                            "--scan", "1.01:4:256"], capsys)
        assert code == 0
        rows = read_table(out)
        assert len(rows) == 256
        for r in rows:
            ub, emp = float(r["ub"]), float(r["empirical"])
            se = math.hypot(float(r["ub_stderr"]), float(r["empirical_stderr"]))
            assert ub >= emp - 3 * se

    def test_power_aggregate(self, extremal_file, capsys):
        code, out, err = run(["bound", "--ensemble", extremal_file, "--zeta", "linear:0.5", "--phi", "power:1.5"],
                             capsys)
        assert code == 0
        rows = read_table(out)
        assert len(rows) == 1
        assert rows[0]["m"] == "total"
        assert list(rows[0]) == ["m", "ub", "ub_stderr", "empirical", "empirical_stderr", "truncation_tail"]
        assert "quadrature_error" in err

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["bound", "--ensemble", tmp_path / "nope.csv", "--zeta", "linear:0.5",
                            "--phi", "power:2"], capsys)
        assert code == 2
        assert "not found" in err

    def test_needs_phi_or_scan(self, extremal_file, capsys):
        code, _, _ = run(["bound", "--ensemble", extremal_file, "--zeta", "linear:0.5"], capsys)
        assert code == 2


class TestDoob:
    def test_lp_ordering(self, tmp_path, capsys):
        path = tmp_path / "p2.csv"
        assert main(["simulate", "--boundary", "linear:0.5", "--paths", "50000", "--seed", "8",
                     "--out", str(path)]) == 0
        code, out, _ = run(["doob", "--ensemble", path, "--mode", "lp", "--p", 2], capsys)
        assert code == 0
        (r,) = read_table(out)
        v = {k: float(x) for k, x in r.items()}
        q = v["quadrature_error"]
        assert v["empirical"] <= v["refined"] + 3 * math.hypot(v["empirical_stderr"], v["refined_stderr"]) + q
        assert v["refined"] <= v["classical"] + 3 * math.hypot(v["refined_stderr"], v["classical_stderr"]) + q

    def test_small_p_analytic(self, capsys):
        code, out, _ = run(["doob", "--mode", "small-p", "--p", 0.5, "--alpha", 0.5], capsys)
        assert code == 0
        (r,) = read_table(out)
        assert float(r["sharp"]) == pytest.approx(4 / 3, abs=1e-9)
        assert float(r["alpha_hat"]) == pytest.approx(0.5, abs=1e-8)

    def test_improved_l1_analytic(self, capsys):
        code, out, _ = run(["doob", "--mode", "improved-l1", "--alpha", 0.5], capsys)
        assert code == 0
        (r,) = read_table(out)
        assert float(r["bound"]) == pytest.approx(2.0, abs=1e-8)
        assert float(r["bound"]) < float(r["classical"])

    def test_needs_moments(self, capsys):
        code, _, _ = run(["doob", "--mode", "small-p", "--p", 0.5], capsys)
        assert code == 2


class TestVerifyOptimize:
    def test_verify_jump_fixture(self, tmp_path, capsys):
        path = tmp_path / "j.csv"
        assert main(["simulate", "--sampler", "jump", "--n", "2", "--paths", "2000", "--seed", "4",
                     "--out", str(path)]) == 0
        code, out, _ = run(["verify", "--ensemble", path, "--zeta", "linear:0.5"], capsys)
        assert code == 0
        (r,) = read_table(out)
        assert int(r["violations"]) == 0
        assert int(r["pairs"]) > 0

    def test_verify_equality(self, extremal_file, capsys):
        code, out, _ = run(["verify", "--ensemble", extremal_file, "--xi", "linear:0.5"], capsys)
        assert code == 0
        (r,) = read_table(out)
        assert float(r["max_abs_residual"]) <= 1e-9

    def test_verify_needs_one_boundary(self, extremal_file, capsys):
        code, _, _ = run(["verify", "--ensemble", extremal_file], capsys)
        assert code == 2

    def test_optimize_level(self, tmp_path, capsys):
        path = tmp_path / "c.csv"
        assert main(["simulate", "--sampler", "two-point", "--low", "0", "--high", "2", "--paths", "1000",
                     "--seed", "2", "--out", str(path)]) == 0
        code, out, _ = run(["optimize", "--ensemble", path, "--level", 1.5], capsys)
        assert code == 0
        (r,) = read_table(out)
        assert 0 <= float(r["zeta"]) < 1.5


class TestCompare:
    def test_equal_boundaries(self, capsys):
        code, _, _ = run(["compare", "--zeta1", "linear:0.5", "--zeta2", "linear:0.5", "--paths", 100], capsys)
        assert code == 2

    def test_small_run_layout(self, capsys):
        code, out, err = run(["compare", "--zeta1", "linear:0.5", "--zeta2", "linear:0.6", "--paths", 2000,
                              "--scan", "1.01:4:16", "--seed", 5], capsys)
        assert code in (0, 1)
        rows = read_table(out)
        assert len(rows) == 32
        assert {r["role"] for r in rows} == {"1", "2"}
        assert "X1" in err and "X2" in err
