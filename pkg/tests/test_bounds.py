import math

import numpy as np
import pytest

from maxbound import fixtures
from maxbound.bounds import (
    EqualBoundaries,
    Family,
    IntegrabilityError,
    QuadratureGrid,
    TruncationError,
    compare_orderings,
    default_grid,
    empirical_max_functional,
    optimize_zeta_single,
    optimize_zeta_vector,
    reconstruct_stopping,
    ub_at_level,
    ub_functional,
    weighted_lambda_paths,
    witness_tail,
)
from maxbound.core import (
    BoundaryVector,
    FlooredLinear,
    Identity,
    IndicatorThreshold,
    Linear,
    PiecewiseLinear,
    Power,
    StoppingBoundaryVector,
    Tabulated,
    TimeGrid,
)
from maxbound.embedding import simulate_exact
from maxbound.pathwise import lambda_sum_array, zeta_from_xi_array


def extremal(alpha, paths, seed, n=1, x0=1.0):
    return simulate_exact(StoppingBoundaryVector((Linear(alpha),) * n, x0), x0, paths, seed)


@pytest.fixture(scope="module")
def half():
    return extremal(0.5, 100_000, seed=41)


@pytest.fixture(scope="module")
def two_thirds():
    return extremal(2 / 3, 100_000, seed=42)


class TestQuadratureGrid:
    def test_geometric(self):
        q = QuadratureGrid.geometric(1.0, 100.0, 64, extra=(3.0,))
        assert q.levels[0] == 1.0
        assert q.levels[1] == pytest.approx(1.0001)
        assert q.levels[-1] == pytest.approx(100.0)
        assert 3.0 in q.levels
        assert q.describe()["rule"] == "geometric"

    def test_invalid(self):
        with pytest.raises(ValueError):
            QuadratureGrid(np.array([1.0, 1.0]), "geometric", 2.0)
        with pytest.raises(ValueError):
            QuadratureGrid(np.array([1.0, 2.0]), "geometric", 1.5)
        with pytest.raises(ValueError):
            QuadratureGrid(np.array([1.0, 2.0]), "simpson", 2.0)

    def test_refined_halves(self):
        q = QuadratureGrid.uniform(0.0, 1.0, 4)
        np.testing.assert_allclose(q.refined().levels, np.linspace(0, 1, 9))

    def test_atoms_only(self):
        q = QuadratureGrid.atoms_only(Tabulated(((0.5, 0.0), (2.0, 1.0), (3.0, 2.0))), 1.0)
        np.testing.assert_array_equal(q.levels, [2.0, 3.0])


class TestUbAtLevel:
    def test_extremal_half(self, half):
        b = BoundaryVector((Linear(0.5),), 1.0)
        est, se = ub_at_level(half, b, 2.0)
        assert abs(est - 0.25) <= 3 * se

    def test_constant_telescopes(self):
        ens = fixtures.constant(1.0, 3, 20)
        b = BoundaryVector((Linear(0.2), Linear(0.5), Linear(0.7)), 1.0)
        est, se = ub_at_level(ens, b, 3.0)
        assert est == pytest.approx((1.0 - 0.6) / (3.0 - 0.6), abs=1e-15)
        assert se == 0.0

    def test_sentinel(self):
        ens = extremal(0.5, 1000, seed=1)
        b = BoundaryVector((FlooredLinear(0.5, 10.0),), 1.0)
        est, se = ub_at_level(ens, b, 2.0)
        assert est == 1.0 and se == 0.0

    def test_level_not_above_start(self, half):
        with pytest.raises(ValueError):
            ub_at_level(half, BoundaryVector((Linear(0.5),), 1.0), 1.0)

    def test_weighted_sum_matches_loop(self):
        ens = extremal(0.6, 500, seed=2, n=2)
        b = BoundaryVector((FlooredLinear(0.3, 1.5), PiecewiseLinear(((1.0, 0.5), (3.0, 1.5), (5.0, 3.2)))), 1.0)
        levels = np.geomspace(1.01, 20.0, 37)
        w = np.linspace(0.1, 2.0, levels.size)
        got = weighted_lambda_paths(ens, b, levels, w)
        z, below = b.values(levels)
        expect = sum(wl * lambda_sum_array(ens.x, m, z[:, k], below[:, k]) for k, (m, wl) in enumerate(zip(levels, w)))
        np.testing.assert_allclose(got, expect, rtol=1e-12, atol=1e-12)


class TestEmpirical:
    def test_indicator(self, half):
        est, se = empirical_max_functional(half, IndicatorThreshold(2.0))
        assert abs(est - 0.25) <= 3 * se

    def test_constant(self):
        est, se = empirical_max_functional(fixtures.constant(1.5, 1, 10), Power(3))
        assert est == 1.5**3 and se == 0.0

    def test_half_power(self, half):
        est, se = empirical_max_functional(half, Power(0.5))
        assert abs(est - 4 / 3) <= 3 * se


class TestUbFunctional:
    def test_indicator_is_single_level(self, half):
        b = BoundaryVector((Linear(0.5),), 1.0)
        rep = ub_functional(half, b, IndicatorThreshold(2.0))
        est, se = ub_at_level(half, b, 2.0)
        assert rep.value == pytest.approx(est, rel=1e-12)
        assert rep.stderr == pytest.approx(se, rel=1e-9)
        assert rep.truncation_tail == 0.0

    def test_tabulated_sums_atoms(self, half):
        b = BoundaryVector((Linear(0.5),), 1.0)
        tab = Tabulated(((0.0, 0.0), (1.5, 1.0), (3.0, 3.0)))
        rep = ub_functional(half, b, tab)
        expect = 0.0 + ub_at_level(half, b, 1.5)[0] + 2.0 * ub_at_level(half, b, 3.0)[0]
        assert rep.value == pytest.approx(expect, rel=1e-12)

    def test_power_sandwich(self, two_thirds):
        b = BoundaryVector((Linear(0.5),), 1.0)
        rep = ub_functional(two_thirds, b, Power(2), require_integrability=False)
        budget = 3 * rep.stderr + 1e-3 * rep.value + rep.quadrature_error
        assert 3.0 - budget <= rep.value <= 10 / 3 + budget

    def test_identity_equality(self):
        ens = extremal(1 / math.e, 100_000, seed=43)
        b = BoundaryVector((FlooredLinear(1 / math.e, 1.0),), 1.0)
        rep = ub_functional(ens, b, Identity())
        assert abs(rep.value - math.e) <= 3 * rep.stderr + rep.quadrature_error

    def test_integrability_required(self, half):
        b = BoundaryVector((Linear(0.5),), 1.0)
        with pytest.raises(IntegrabilityError):
            ub_functional(half, b, Power(2))

    def test_truncation_limit(self, half):
        b = BoundaryVector((PiecewiseLinear(((1.0, 0.5), (2.0, 1.0), (3.0, 1.0))),), 1.0)
        with pytest.raises(TruncationError):
            ub_functional(half, b, Identity(), require_integrability=False)

    def test_empirical_cutoff_makes_tail_zero(self, half):
        b = BoundaryVector((Linear(0.7),), 1.0)
        q = default_grid(half, b, Identity())
        assert q.tail_bound == 0.0
        assert q.m_max == pytest.approx(half.x[:, 1].max() / 0.7)

    def test_witness_tail_closed_form(self):
        # gamma m^(gamma-1) (1/m)^2 integrated from 10: gamma 10^(gamma-2)/(2-gamma)
        from scipy import integrate

        val, _ = integrate.quad(lambda m: 1.5 * m**0.5 * m**-2.0, 10.0, np.inf)
        assert witness_tail(Power(1.5), 0.5, 1.0, 10.0) == pytest.approx(val, rel=1e-10)
        assert witness_tail(Power(2.0), 0.5, 1.0, 10.0) == math.inf

    def test_quadrature_consistency(self, two_thirds):
        b = BoundaryVector((Linear(0.7),), 1.0)
        q = default_grid(two_thirds, b, Power(2), count=128)
        coarse = ub_functional(two_thirds, b, Power(2), q)
        fine = ub_functional(two_thirds, b, Power(2), q.refined())
        assert abs(fine.value - coarse.value) <= coarse.quadrature_error + 1e-12

    def test_constant_ensemble(self):
        ens = fixtures.constant(1.0, 2, 10)
        b = BoundaryVector.repeated(Linear(0.5), 2, 1.0)
        rep = ub_functional(ens, b, Power(2), QuadratureGrid.geometric(1.0, 1e4, 2048), require_integrability=False,
                            max_tail_fraction=None)
        # phi(1) plus the integral over (1, 2] of 2m (1 - m/2) / (m/2) = 4 - 2m, i.e. 1 + 1
        from scipy import integrate

        val, _ = integrate.quad(lambda m: 2 * m * max(1 - 0.5 * m, 0) / (0.5 * m), 1, 2)
        assert val == pytest.approx(1.0)
        assert rep.value == pytest.approx(1.0 + val, abs=1e-6)

    @pytest.mark.parametrize("kind", ["bridge", "jump"])
    def test_dominance(self, kind):
        grid = TimeGrid.uniform(2)
        if kind == "bridge":
            ens = fixtures.bridge_submartingale(grid, 1.0, 20_000, seed=44, drift=0.1)
        else:
            ens = fixtures.jump_submartingale(grid, 1.0, 20_000, seed=45, drift=0.1)
        b = BoundaryVector((Linear(0.3), Linear(0.6)), 1.0)
        for m0 in (1.2, 1.7, 2.5):
            phi = IndicatorThreshold(m0)
            rep = ub_functional(ens, b, phi)
            emp, emp_se = empirical_max_functional(ens, phi)
            assert emp <= rep.value + 3 * math.hypot(rep.stderr, emp_se)

    def test_equality_on_extremal(self):
        ens = extremal(0.6, 100_000, seed=46, n=2)
        b = BoundaryVector.repeated(Linear(0.6), 2, 1.0)
        rep = ub_functional(ens, b, Power(1.5))
        emp, _ = empirical_max_functional(ens, Power(1.5))
        # same paths: the per-path UB integrand equals phi(max) up to quadrature
        assert abs(rep.value - emp) <= 3 * rep.stderr + rep.quadrature_error + 1e-3 * emp


class TestOptimizeSingle:
    def test_constant_samples(self):
        res = optimize_zeta_single(np.ones(100), 2.0, x0=1.0)
        # the objective vanishes on [X_0, m), the smallest minimiser is X_0
        assert res.value == 0.0
        assert res.zeta == pytest.approx(1.0)

    def test_extremal_law(self, half):
        xs = half.x[:, 1]
        res = optimize_zeta_single(xs, 2.0)
        # oracle: direct grid scan of the empirical objective
        zs = np.linspace(-5.0, 2.0 - 1e-6, 20_001)
        srt = np.sort(xs)
        tail = np.concatenate([np.cumsum(srt[::-1])[::-1], [0.0]])
        k = np.searchsorted(srt, zs, side="right")
        scan = (tail[k] - (srt.size - k) * zs) / srt.size / (2.0 - zs)
        assert res.value <= scan.min() + 1e-12
        assert res.zeta == pytest.approx(zs[scan.argmin()], abs=2e-3)
        assert res.zeta == pytest.approx(1.0, abs=0.05)
        assert res.value == pytest.approx(0.25, abs=0.01)

    def test_two_point(self):
        xs = np.array([0.0, 2.0] * 50)
        res = optimize_zeta_single(xs, 3.0)
        # 1e4-point scan: zero on [2, 3), positive below 2
        zs = np.linspace(-20.0, 3.0 - 1e-9, 10_000)
        scan = np.array([np.mean(np.maximum(xs - z, 0)) / (3 - z) for z in zs])
        assert scan.min() == 0.0 and zs[scan.argmin()] >= 2.0
        assert res.value == 0.0
        assert 2.0 <= res.zeta < 3.0

    def test_empty(self):
        with pytest.raises(ValueError):
            optimize_zeta_single([], 2.0)


class TestOptimizeVector:
    def test_recovers_generating_slope(self):
        ens = extremal(0.6, 20_000, seed=47)
        res = optimize_zeta_vector(ens, IndicatorThreshold(2.0), Family("linear", 1))
        # for a single atom the optimum makes zeta(2) the best put-chord point
        direct = optimize_zeta_single(ens.x[:, 1], 2.0)
        assert res.value == pytest.approx(direct.value, abs=1e-6)

    def test_redundant_stage_collapses(self):
        # the second stage never moves: zeta_2 = zeta_1 is optimal
        xi = StoppingBoundaryVector((Linear(0.5), Linear(0.7)), 1.0)
        ens = simulate_exact(xi, 1.0, 20_000, seed=48)
        res = optimize_zeta_vector(ens, Power(1.5), Family("linear", 2))
        assert res.params[0] == pytest.approx(res.params[1], abs=1e-12)
        one = optimize_zeta_vector(fixtures_first_stage(ens), Power(1.5), Family("linear", 1))
        assert res.value == pytest.approx(one.value, rel=1e-6)

    def test_monotone_projection(self):
        ens = extremal(0.6, 2000, seed=49, n=3)
        res = optimize_zeta_vector(ens, Power(1.5), Family("linear", 3), start=(0.9, 0.2, 0.5))
        assert list(res.params) == sorted(res.params)

    def test_constant_ensemble(self):
        # UB = 1 + int_1^(1/a) 2 (1 - a m) / (1 - a) dm = 1 + (1 - a) / a, smallest at the upper edge
        ens = fixtures.constant(1.0, 1, 10)
        fam = Family("linear", 1)
        res = optimize_zeta_vector(ens, Power(2), fam)
        a = fam.upper
        assert res.params[0] == pytest.approx(a, abs=1e-6)
        assert res.value == pytest.approx(1.0 + (1 - a) / a, abs=1e-3 * (1 - a))

    def test_bad_family(self):
        ens = fixtures.constant(1.0, 1, 10)
        with pytest.raises(ValueError):
            optimize_zeta_vector(ens, Power(2), Family("linear", 1, lower=0.5, upper=0.4))
        with pytest.raises(ValueError):
            optimize_zeta_vector(ens, Power(2), Family("linear", 2))


def fixtures_first_stage(ens):
    from maxbound.core import MonteCarloEnsemble

    return MonteCarloEnsemble(TimeGrid.uniform(1), ens.x[:, :2], ens.s[:, :2], ens.seed, ens.generator_id)


class TestReconstruction:
    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_suffix_minima_recover_zeta(self, n):
        zeta = BoundaryVector.repeated(Linear(0.5), n, 1.0)
        xi = reconstruct_stopping(zeta)
        m = np.concatenate([np.linspace(1.0001, 1.05, 50), np.geomspace(1.05, 1e4, 200)])
        z, _ = zeta_from_xi_array(xi, m)
        np.testing.assert_allclose(z, zeta.values(m)[0], rtol=1e-13, atol=1e-13)
        vals, _ = xi.values(m)
        near = m < 1.05
        if n > 1:
            # strictly reversed order near X_0
            assert np.all(np.diff(vals[:, near & (m > 1.0001)], axis=0) < 0)
        assert np.all(vals < m)

    def test_needs_common_start(self):
        zeta = BoundaryVector((Linear(0.4), Linear(0.5)), 1.0)
        with pytest.raises(ValueError):
            reconstruct_stopping(zeta)


class TestCompare:
    def test_equal_rejected(self):
        z = BoundaryVector.repeated(Linear(0.5), 2, 1.0)
        with pytest.raises(EqualBoundaries):
            compare_orderings(z, BoundaryVector.repeated(Linear(0.5), 2, 1.0), paths=100)

    def test_small_run_shapes(self):
        z1 = BoundaryVector.repeated(Linear(0.5), 2, 1.0)
        z2 = BoundaryVector.repeated(Linear(0.6), 2, 1.0)
        res = compare_orderings(z1, z2, paths=2000, seed=1, levels=np.geomspace(1.01, 4, 16))
        assert res.first.levels.size == 16
        assert res.first.margin.shape == (16,)
        assert np.all(res.first.margin_stderr >= 0)
