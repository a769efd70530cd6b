import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rkhspe.errors import InputError, NumericError
from rkhspe.kernel_core import (CenterSet, KernelSpec, RkhsFunction, complementary_values,
                                eval_kernel, gram, project, rkhs_norm, sup_norm_estimate)

# Reference values computed once with 30-digit mpmath arithmetic.
R_AT_L_OVER_SQRT3 = 0.735758882342884643   # 2 / e
R_AT_L = 0.483357724596507651              # (1 + sqrt3) exp(-sqrt3)
R_03_05 = 0.721330423751500422             # r = 0.3, l = 0.5
LINE_CENTERS = np.array([[0.0], [0.4], [1.0]])
LINE_ALPHA = np.array([1.0, -2.0, 0.5])
LINE_NORM = 1.494041628952465817
LINE_F_AT_07 = -0.778930426714258593
SQUARE_PROJ_AT_07 = 0.603578723104295959   # projection of x^2, evaluated at 0.7


class TestKernel:
    def test_reference_values(self):
        k1 = KernelSpec(1.0)
        assert eval_kernel(k1, [0.0], [0.0]) == 1.0
        assert eval_kernel(k1, [0.0], [1 / np.sqrt(3)]) == pytest.approx(R_AT_L_OVER_SQRT3, rel=1e-14)
        assert eval_kernel(k1, [0.0, 0.0], [0.6, 0.8]) == pytest.approx(R_AT_L, rel=1e-14)
        assert eval_kernel(KernelSpec(0.5), [0.1], [0.4]) == pytest.approx(R_03_05, rel=1e-14)

    def test_rejects_bad_parameters(self):
        with pytest.raises(InputError):
            KernelSpec(0.0)
        with pytest.raises(InputError):
            KernelSpec(1.0, family="gaussian")
        with pytest.raises(InputError):
            eval_kernel(KernelSpec(1.0), [0.0, 1.0], [0.0])

    @given(arrays(float, 3, elements=st.floats(-10, 10)), arrays(float, 3, elements=st.floats(-10, 10)),
           st.floats(0.01, 10))
    def test_symmetric_and_bounded(self, x, y, l):
        k = KernelSpec(l)
        v = eval_kernel(k, x, y)
        assert v == eval_kernel(k, y, x)
        assert 0.0 <= v <= 1.0

    def test_profile_is_decreasing(self):
        r = np.linspace(0, 5, 200)
        assert np.all(np.diff(KernelSpec(0.7).profile(r)) < 0)


class TestGram:
    def test_entries_and_orientation(self):
        k = KernelSpec(1.0)
        rows = CenterSet([[0.0, 0.0], [1.0, 0.0]])
        cols = CenterSet([[0.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
        G = gram(k, rows, cols)
        assert G.entries.shape == (2, 3) and not G.symmetric
        for i in range(2):
            for j in range(3):
                assert G.entries[i, j] == pytest.approx(eval_kernel(k, cols.points[j], rows.points[i]))

    def test_square_is_spd_without_jitter(self):
        pts = np.random.default_rng(0).uniform(-1, 1, (20, 2))
        G = gram(KernelSpec(0.3), CenterSet(pts))
        assert G.symmetric and G.jitter == 0.0
        assert np.array_equal(G.entries, G.entries.T)
        assert 0 < G.min_eig <= G.max_eig
        assert G.min_eig == pytest.approx(np.linalg.eigvalsh(G.entries)[0])

    def test_near_duplicate_centers_get_jitter(self):
        pts = np.array([[0.0, 0.0], [1e-9, 0.0], [1.0, 1.0]])
        G = gram(KernelSpec(1.0), CenterSet(pts))
        assert G.jitter > 0
        assert G.min_eig > 1e-12 * G.max_eig
        a = G.solve(np.ones(3))
        assert np.all(np.isfinite(a))

    def test_solve_matches_dense_solver(self):
        pts = np.random.default_rng(1).uniform(-1, 1, (15, 3))
        G = gram(KernelSpec(0.5), CenterSet(pts))
        b = np.arange(15.0)
        assert np.allclose(G.solve(b), np.linalg.solve(G.entries, b), rtol=1e-9, atol=1e-9)

    def test_solve_checks_length(self):
        G = gram(KernelSpec(1.0), CenterSet([[0.0], [1.0]]))
        with pytest.raises(InputError):
            G.solve(np.ones(3))

    @settings(max_examples=30, deadline=None)
    @given(arrays(float, (8, 2), elements=st.floats(-5, 5), unique=True), st.floats(0.05, 3))
    def test_random_gram_is_psd(self, pts, l):
        G = gram(KernelSpec(l), CenterSet(pts))
        assert np.linalg.eigvalsh(G.effective)[0] > 0


class TestCenterSet:
    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(InputError):
            CenterSet(np.zeros((0, 2)))
        with pytest.raises(InputError):
            CenterSet([[np.nan, 0.0]])

    def test_duplicates_detected(self):
        with pytest.raises(InputError):
            CenterSet([[0.0, 1.0], [0.0, 1.0]]).validate_distinct()
        assert CenterSet([[0.0, 0.0], [3.0, 4.0]]).min_separation() == 5.0
        assert CenterSet([[1.0, 2.0]]).min_separation() == np.inf

    def test_points_are_read_only(self):
        c = CenterSet([[0.0, 1.0]])
        with pytest.raises(ValueError):
            c.points[0, 0] = 2.0


class TestRkhsFunction:
    def setup_method(self):
        self.k = KernelSpec(0.5)
        self.c = CenterSet(LINE_CENTERS)

    def test_evaluation_matches_reference(self):
        f = RkhsFunction(self.c, LINE_ALPHA, self.k)
        assert f([0.7]) == pytest.approx(LINE_F_AT_07, rel=1e-13)
        vals = f(np.array([[0.7], [0.0]]))
        assert vals.shape == (2,) and vals[0] == pytest.approx(LINE_F_AT_07, rel=1e-13)

    def test_norm_matches_double_sum(self):
        f = RkhsFunction(self.c, LINE_ALPHA, self.k)
        S = gram(self.k, self.c)
        assert rkhs_norm(f, S) == pytest.approx(LINE_NORM, rel=1e-13)
        double_sum = sum(LINE_ALPHA[i] * LINE_ALPHA[j] * eval_kernel(self.k, LINE_CENTERS[i], LINE_CENTERS[j])
                         for i in range(3) for j in range(3))
        assert rkhs_norm(f, S) == pytest.approx(np.sqrt(double_sum), rel=1e-13)

    def test_coefficient_count_checked(self):
        with pytest.raises(InputError):
            RkhsFunction(self.c, [1.0, 2.0], self.k)

    def test_with_coefficients(self):
        f = RkhsFunction(self.c, LINE_ALPHA, self.k).with_coefficients(np.zeros(3))
        assert f([0.3]) == 0.0


class TestProjection:
    def test_projection_of_square(self):
        k = KernelSpec(0.5)
        S = gram(k, CenterSet(LINE_CENTERS))
        square = lambda p: np.asarray(p)[..., 0] ** 2
        proj = project(square(LINE_CENTERS), S)
        assert proj([0.7]) == pytest.approx(SQUARE_PROJ_AT_07, rel=1e-11)
        vn = complementary_values(square, proj, LINE_CENTERS)
        assert np.max(np.abs(vn)) <= 1e-12
        assert complementary_values(square, proj, [[0.7]])[0] == pytest.approx(0.49 - SQUARE_PROJ_AT_07, rel=1e-10)

    def test_projection_is_identity_on_span(self):
        k = KernelSpec(0.8)
        pts = np.random.default_rng(3).uniform(-1, 1, (10, 2))
        c = CenterSet(pts)
        alpha = np.random.default_rng(4).standard_normal(10)
        f = RkhsFunction(c, alpha, k)
        proj = project(f(pts), gram(k, c))
        assert np.allclose(proj.coefficients, alpha, rtol=1e-8, atol=1e-8)

    def test_projection_needs_square_gram(self):
        k = KernelSpec(1.0)
        G = gram(k, CenterSet([[0.0], [1.0]]), CenterSet([[0.5], [2.0]]))
        with pytest.raises(InputError):
            project([1.0, 2.0], G)

    def test_sup_norm(self):
        assert sup_norm_estimate([1.0, -3.0, 2.0]) == 3.0
        with pytest.raises(InputError):
            sup_norm_estimate([])


def test_nonfinite_kernel_values_rejected():
    with pytest.raises((InputError, NumericError)):
        gram(KernelSpec(1.0), CenterSet([[0.0], [1.0]]), np.array([[np.inf]]))
