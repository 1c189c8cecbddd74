import numpy as np
import pytest

from conftest import three_level_compliance
from ivcox.beran import SmoothSubCdf, StepCdf
from ivcox.config import EstimatorConfig
from ivcox.dataset import Dataset
from ivcox.errors import Saturated
from ivcox.phi_solver import (CellCdfBundle, QuantileMap, TriangularOrder, detect_triangular,
                              eval_A, phi_hat, solve_general, solve_triangular,
                              solve_triangular_grid)
from ivcox.simharness import generate_design, true_phi


def step(times, values, t_bar=5.0, scale=1.0):
    return SmoothSubCdf(StepCdf(times, values, t_bar), 0.0, None, scale)


def two_level_bundle():
    # entries[l][k]: treatment l under instrument k; level 1 absent under instrument 0
    e00 = step([1.0, 2.0, 3.0], [0.3, 0.6, 0.9])
    e01 = step([0.5, 1.5, 2.5], [0.2, 0.5, 0.8], scale=0.4)
    e10 = step([], [], scale=0.0)
    e11 = step([0.4, 0.8, 1.6], [0.25, 0.6, 0.95], scale=0.6)
    return CellCdfBundle(((e00, e01), (e10, e11)), 0.9, 5.0)


class TestResidual:
    def test_zero_theta(self):
        np.testing.assert_allclose(eval_A(np.zeros(2), two_level_bundle(), 0.3), [-0.3, -0.3])

    def test_zero_everything(self):
        np.testing.assert_allclose(eval_A(np.zeros(2), two_level_bundle(), 0.0), [0.0, 0.0])

    def test_hand_sums(self):
        # k=0: F00(1)=0.3, F10=0 ; k=1: 0.4*F01(1)=0.08, 0.6*F11(2)=0.57
        np.testing.assert_allclose(eval_A(np.array([1.0, 2.0]), two_level_bundle(), 0.3),
                                   [0.3 - 0.3, 0.08 + 0.57 - 0.3])


def binary_data(p_treated_given_w0, n=400, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.integers(0, 2, n)
    z = np.where(w == 1, rng.random(n) < 0.6, rng.random(n) < p_treated_given_w0).astype(int)
    return Dataset(rng.exponential(size=n), np.ones(n, int), z, rng.uniform(size=n), w)


class TestDetection:
    def test_one_sided_noncompliance(self):
        assert detect_triangular(binary_data(0.0)) == TriangularOrder((0, 1), (0, 1))

    def test_application_pattern(self):
        order = detect_triangular(three_level_compliance(scale=0.3))
        assert order == TriangularOrder((0, 1, 2), (0, 1, 2))

    def test_full_support(self):
        assert detect_triangular(binary_data(0.3)) is None

    def test_tolerance_admits_sparse_cells(self):
        data = binary_data(0.01, n=2000)
        assert detect_triangular(data) is None
        assert detect_triangular(data, tol=0.05) is not None

    def test_relabelled_levels(self):
        # swap instrument labels: the triangular order needs w = (1, 0)
        data = binary_data(0.0)
        flipped = Dataset(data.y, data.delta, data.z, data.x, 1 - data.w)
        assert detect_triangular(flipped) == TriangularOrder((0, 1), (1, 0))


class TestTriangular:
    def test_zero(self):
        b = two_level_bundle()
        np.testing.assert_array_equal(solve_triangular(b, 0.0, TriangularOrder((0, 1), (0, 1))), [0, 0])

    def test_closed_form(self):
        b = two_level_bundle()
        theta = solve_triangular(b, 0.5, TriangularOrder((0, 1), (0, 1)))
        # level 0 from instrument 0: F00 >= 0.5 first at t=2
        # level 1: 0.6 F11(t) >= 0.5 - 0.4 F01(2) = 0.3  ->  F11 >= 0.5 at t=0.8
        np.testing.assert_allclose(theta, [2.0, 0.8])

    def test_single_level_is_conditional_quantile(self):
        f = step([1.0, 2.0], [0.4, 0.8])
        b = CellCdfBundle(((f,),), 0.9, 5.0)
        assert solve_triangular(b, 0.5, TriangularOrder((0,), (0,)))[0] == 2.0

    def test_saturation(self):
        with pytest.raises(Saturated):
            solve_triangular(two_level_bundle(), 0.95, TriangularOrder((0, 1), (0, 1)))


class TestGeneral:
    def test_zero(self):
        sol = solve_general(two_level_bundle(), 0.0)
        np.testing.assert_array_equal(sol.theta, [0, 0])
        assert sol.residual == 0.0

    @pytest.mark.parametrize("u", [0.05, 0.25, 0.5, 0.7, 0.85])
    def test_matches_triangular_hand_bundle(self, u):
        b = two_level_bundle()
        tri = solve_triangular(b, u, TriangularOrder((0, 1), (0, 1)))
        np.testing.assert_allclose(solve_general(b, u).theta, tri, atol=1e-6)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_triangular_estimated(self, seed):
        data = three_level_compliance(seed=seed, scale=0.4)
        qmap = QuantileMap(data, EstimatorConfig())
        b = qmap.bundle(0.5)
        for u in (0.1, 0.3, 0.45):
            tri = solve_triangular(b, u, qmap.order)
            np.testing.assert_allclose(solve_general(b, u, seed=seed).theta, tri, atol=1e-6)

    def test_smooth_system(self):
        # two smooth exponential-like sub-CDFs per equation, not triangular
        def f(rate, scale):
            t = np.linspace(0.01, 6, 600)
            return SmoothSubCdf(StepCdf(t, 1 - np.exp(-rate * t), 6.0), 0.05, None, scale)
        b = CellCdfBundle(((f(1.0, 0.7), f(1.0, 0.3)), (f(2.0, 0.3), f(2.0, 0.7))), 0.9, 6.0)
        sol = solve_general(b, 0.5)
        assert sol.residual_inf < 1e-8
        assert not sol.rank_deficient

    def test_irrelevant_instrument_flags_rank(self):
        f = step(np.linspace(0.1, 4, 40), np.linspace(0.02, 0.8, 40), scale=0.5)
        b = CellCdfBundle(((f, f), (f, f)), 0.9, 5.0)
        sol = solve_general(b, 0.3)
        assert sol.residual_inf <= 0.02 + 1e-12
        assert sol.rank_deficient


class TestQuantileMap:
    def test_zero_rank(self):
        qmap = QuantileMap(generate_design("discrete-bernoulli", 500, 1), EstimatorConfig())
        assert phi_hat(qmap, 1, 0.0, 0.0) == 0.0

    @pytest.mark.parametrize("design", ["discrete-bernoulli", "continuous-uniform"])
    def test_monotone_after_projection(self, design):
        data = generate_design(design, 600, 7)
        qmap = QuantileMap(data, EstimatorConfig())
        qmap.solve_at(data.x[:50])
        for x in data.x[:50]:
            sol = qmap.solution(x)
            for l in range(2):
                ok = ~sol.saturated[:, l]
                assert np.all(np.diff(sol.theta[ok, l]) >= 0)
        assert phi_hat(qmap, 1, data.x[0], 0.2) <= phi_hat(qmap, 1, data.x[0], 0.4)

    def test_residual_bound(self):
        data = generate_design("discrete-bernoulli", 800, 3)
        qmap = QuantileMap(data, EstimatorConfig())
        for x in (0.0, 1.0):
            sol = qmap.solution(x)
            b = qmap.bundle(x)
            bound = max(b.jump_bound().max(), 1e-8)
            A = eval_A(sol.raw_theta, b, qmap.u_grid)
            ok = ~sol.saturated.any(axis=1)
            over = ok & (np.abs(A).max(axis=1) > bound + 1e-12)
            # only where the estimated system is infeasible: a level pinned at 0
            # while the other levels already overshoot u
            assert np.all(sol.raw_theta[over].min(axis=1) == 0.0)
            assert np.all(A[over] >= -bound)
            assert over.sum() <= 0.05 * qmap.u_grid.size

    def test_oracle_design(self):
        data = generate_design("discrete-bernoulli", 20000, 11)
        qmap = QuantileMap(data, EstimatorConfig())
        assert phi_hat(qmap, 1, 0.0, 0.5) == pytest.approx(np.log(2) / np.exp(0.7), abs=0.03)
        assert np.log(2) / np.exp(0.7) == pytest.approx(0.3442, abs=1e-4)

    def test_sup_error_at_n4000(self):
        u = np.round(np.arange(0.1, 0.81, 0.1), 2)
        data = generate_design("discrete-bernoulli", 4000, 21)
        qmap = QuantileMap(data, EstimatorConfig())
        for z in (0, 1):
            for x in (0.0, 1.0):
                v, sat = qmap.lookup(np.full(u.size, z), np.full(u.size, x), u)
                assert not sat.any()
                assert np.max(np.abs(v - true_phi("discrete-bernoulli", z, x, u))) < 0.1

    def test_general_mode_agrees_with_triangular(self):
        data = generate_design("discrete-bernoulli", 300, 5)
        tri = QuantileMap(data, EstimatorConfig())
        gen = QuantileMap(data, EstimatorConfig(solver="general"))
        assert gen.mode == "general"
        for x in (0.0, 1.0):
            a, b = tri.solution(x), gen.solution(x)
            ok = ~(a.saturated | b.saturated)
            np.testing.assert_allclose(a.theta[ok], b.theta[ok], atol=1e-6)

    def test_x_grid_interpolates(self):
        data = generate_design("continuous-uniform", 500, 2)
        qmap = QuantileMap(data, EstimatorConfig(x_grid=11))
        xp = qmap.x_points
        mid = 0.5 * (xp[3] + xp[4])
        lo, _ = qmap.lookup([1], [xp[3]], [0.4])
        hi, _ = qmap.lookup([1], [xp[4]], [0.4])
        v, _ = qmap.lookup([1], [mid], [0.4])
        assert v[0] == pytest.approx(0.5 * (lo[0] + hi[0]))

    def test_triangular_grid_matches_pointwise(self):
        b = two_level_bundle()
        order = TriangularOrder((0, 1), (0, 1))
        grid = np.linspace(0, 0.85, 18)
        theta, sat = solve_triangular_grid(b, grid, order)
        assert not sat.any()
        for g, u in enumerate(grid):
            np.testing.assert_array_equal(theta[g], solve_triangular(b, u, order))
