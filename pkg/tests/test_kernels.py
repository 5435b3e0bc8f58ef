import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, max_rel
from logdetgp import (
    ContractViolation,
    DataSet,
    DenseSizeError,
    Hyperparameters,
    InducingGrid,
    KernelSpec,
    KroneckerOperator,
    OutOfGridError,
    ToeplitzOperator,
    build_dense_kernel,
    build_interp_weights,
    build_ski_operator,
    derivative_operator,
    derivative_operators,
    kernel_eval,
    kernel_grad,
    kernel_hessian,
    kernel_matrix,
    materialize,
    second_derivative_operators,
    ski_diag_correction,
)
from logdetgp.kernels import grid_kernel_matrix

FAMILIES = ["rbf", "matern12", "matern32", "matern52"]


def _closed_form(family, r, ell, sf):
    s = r / ell
    if family == "rbf":
        return sf**2 * np.exp(-0.5 * s**2)
    if family == "matern12":
        return sf**2 * np.exp(-s)
    if family == "matern32":
        return sf**2 * (1 + np.sqrt(3) * s) * np.exp(-np.sqrt(3) * s)
    return sf**2 * (1 + np.sqrt(5) * s + 5 * s**2 / 3) * np.exp(-np.sqrt(5) * s)


class TestKernelEval:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_zero_distance(self, family):
        th = Hyperparameters.from_natural(0.7, 1.3, 0.1)
        assert kernel_eval(KernelSpec(family), th, [0.2, 0.5], [0.2, 0.5]) == th.signal**2

    def test_matern12_unit(self):
        th = Hyperparameters.from_natural(1.0, 1.0, 0.1)
        assert kernel_eval(KernelSpec("matern12"), th, [0.0], [1.0]) == pytest.approx(0.367879, abs=1e-6)

    def test_rbf_at_lengthscale(self):
        th = Hyperparameters.from_natural(0.3, 1.0, 0.1)
        assert kernel_eval(KernelSpec("rbf"), th, [0.0], [0.3]) == pytest.approx(0.606531, abs=1e-6)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_against_closed_form(self, family, rng):
        ell, sf = 0.8, 1.7
        th = Hyperparameters.from_natural(ell, sf, 0.1)
        for _ in range(10):
            x, x2 = rng.standard_normal((2, 3))
            r = np.linalg.norm(x - x2)
            assert kernel_eval(KernelSpec(family), th, x, x2) == pytest.approx(_closed_form(family, r, ell, sf), rel=1e-13)

    def test_ard(self):
        th = Hyperparameters.from_natural([1.0, 2.0], 1.0, 0.1)
        val = kernel_eval(KernelSpec("rbf", isotropic=False), th, [0.0, 0.0], [1.0, 2.0])
        assert val == pytest.approx(np.exp(-1.0))

    def test_dimension_mismatch(self):
        th = Hyperparameters.from_natural([1.0, 2.0], 1.0, 0.1)
        with pytest.raises(ContractViolation):
            kernel_eval(KernelSpec("rbf", isotropic=False), th, [0.0], [1.0])


class TestKernelGrad:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_signal_partial(self, family, rng):
        th = Hyperparameters.from_natural(0.6, 1.4, 0.1)
        x, x2 = rng.standard_normal((2, 2))
        g = kernel_grad(KernelSpec(family), th, x, x2)
        assert g[-1] == pytest.approx(2 * kernel_eval(KernelSpec(family), th, x, x2), rel=1e-14)

    def test_rbf_lengthscale_at_zero(self):
        th = Hyperparameters.from_natural(0.6, 1.4, 0.1)
        assert kernel_grad(KernelSpec("rbf"), th, [0.3], [0.3])[0] == 0.0

    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("iso", [True, False])
    def test_finite_differences(self, family, iso, rng):
        spec = KernelSpec(family, isotropic=iso)
        ls = [0.7] if iso else [0.7, 1.3]
        base = Hyperparameters.from_natural(ls, 1.2, 0.1).to_vector()
        p = len(ls)
        for _ in range(5):
            x, x2 = rng.standard_normal((2, 2))

            def f(v):
                return kernel_eval(spec, Hyperparameters.from_vector(v, p), x, x2)

            fd = central_diff(f, base)[:-1]
            g = kernel_grad(spec, Hyperparameters.from_vector(base, p), x, x2)
            assert max_rel(g, fd) < 1e-6

    @pytest.mark.parametrize("family", FAMILIES)
    def test_hessian_finite_differences(self, family, rng):
        spec = KernelSpec(family, isotropic=False)
        base = Hyperparameters.from_natural([0.7, 1.3], 1.2, 0.1).to_vector()
        x, x2 = rng.standard_normal((2, 2))

        def g(v):
            return kernel_grad(spec, Hyperparameters.from_vector(v, 2), x, x2)

        fd = np.array([central_diff(lambda v: g(v)[i], base)[:-1] for i in range(3)])
        H = kernel_hessian(spec, Hyperparameters.from_vector(base, 2), x, x2)
        assert max_rel(H, fd) < 1e-6


class TestDenseKernel:
    def test_single_point(self):
        th = Hyperparameters.from_natural(0.5, 2.0, 0.3)
        K = materialize(build_dense_kernel(KernelSpec("rbf"), th, np.array([[0.4]])))
        assert K.shape == (1, 1) and K[0, 0] == pytest.approx(4.0 + 0.09)

    def test_coincident_points(self):
        th = Hyperparameters.from_natural(0.5, 2.0, 0.3)
        K = materialize(build_dense_kernel(KernelSpec("matern32"), th, np.zeros((2, 1))))
        np.testing.assert_allclose(K, [[4.09, 4.0], [4.0, 4.09]])

    def test_cholesky_succeeds(self, rng):
        th = Hyperparameters.from_natural(0.3, 1.0, 0.1)
        X = rng.uniform(0, 4, (500, 2))
        K = materialize(build_dense_kernel(KernelSpec("rbf"), th, X))
        L = scipy.linalg.cholesky(K, lower=True)
        assert np.all(np.diag(L) > 0)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_symmetric_pd_small_noise(self, family, rng):
        th = Hyperparameters.from_natural(0.5, 1.0, 1e-4)
        X = rng.uniform(0, 3, (1000, 1))
        K = materialize(build_dense_kernel(KernelSpec(family), th, X))
        assert np.max(np.abs(K - K.T)) <= 1e-14
        assert np.linalg.eigvalsh(K).min() > 0

    def test_cap(self):
        th = Hyperparameters.from_natural(0.5, 1.0, 0.1)
        with pytest.raises(DenseSizeError, match="SKI"):
            build_dense_kernel(KernelSpec("rbf"), th, np.zeros((11, 1)), cap=10)


class TestHyperparameters:
    def test_roundtrip(self):
        th = Hyperparameters.from_natural([0.5, 2.0], 1.5, 0.2)
        back = Hyperparameters.from_vector(th.to_vector(), 2)
        np.testing.assert_allclose(back.lengthscales, [0.5, 2.0])
        assert back.signal == pytest.approx(1.5) and back.noise == pytest.approx(0.2)

    def test_rejects_nan(self):
        with pytest.raises(ContractViolation):
            Hyperparameters([np.nan], 0.0, 0.0)

    def test_dataset_validation(self):
        with pytest.raises(ContractViolation):
            DataSet(np.zeros((3, 1)), np.array([1.0, np.inf, 0.0]))
        with pytest.raises(ContractViolation):
            DataSet(np.zeros((3, 1)), np.zeros(2))
        assert DataSet(np.arange(4.0), np.ones(4)).d == 1


class TestInterpolation:
    def test_node_selection(self):
        grid = InducingGrid((np.arange(10.0),))
        W = build_interp_weights(np.array([[4.0]]), grid).toarray()
        expected = np.zeros(10)
        expected[4] = 1.0
        np.testing.assert_allclose(W[0], expected, atol=1e-12)

    def test_reproduces_linear(self):
        grid = InducingGrid((np.arange(4.0),))
        W = build_interp_weights(np.array([[1.5]]), grid)
        assert (W @ np.arange(4.0))[0] == pytest.approx(1.5, abs=1e-12)

    def test_reproduces_cubic(self, rng):
        u = np.linspace(-1.0, 2.0, 50)
        grid = InducingGrid((u,))
        x = rng.uniform(u[1], u[-2], 200)
        W = build_interp_weights(x[:, None], grid)
        np.testing.assert_allclose(W @ u**3, x**3, atol=1e-10)

    def test_row_structure_2d(self, rng):
        grid = InducingGrid((np.linspace(0, 1, 12), np.linspace(-1, 1, 9)))
        X = np.column_stack([rng.uniform(0.1, 0.9, 40), rng.uniform(-0.7, 0.7, 40)])
        W = build_interp_weights(X, grid)
        assert np.all(np.diff(W.indptr) <= 16)
        np.testing.assert_allclose(np.asarray(W.sum(axis=1)).ravel(), 1.0, atol=1e-12)
        # Tensor-product reproduction of x*y^2.
        P = grid.points()
        np.testing.assert_allclose(W @ (P[:, 0] * P[:, 1] ** 2), X[:, 0] * X[:, 1] ** 2, atol=1e-12)

    def test_out_of_grid(self):
        grid = InducingGrid((np.arange(8.0),))
        with pytest.raises(OutOfGridError, match="dimension 0"):
            build_interp_weights(np.array([[0.5]]), grid)

    def test_grid_validation(self):
        with pytest.raises(ContractViolation):
            InducingGrid((np.arange(3.0),))
        with pytest.raises(ContractViolation):
            InducingGrid((np.array([0.0, 1.0, 3.0, 4.0]),))

    def test_from_data_margin(self, rng):
        X = rng.uniform(-2, 3, (100, 2))
        grid = InducingGrid.from_data(X, [20, 30])
        for j, a in enumerate(grid.axes):
            h = a[1] - a[0]
            assert a[0] <= X[:, j].min() - 2 * h + 1e-12
            assert a[-1] >= X[:, j].max() + 2 * h - 1e-12
        build_interp_weights(X, grid)


class TestSki:
    def test_on_grid_nodes_equals_dense(self):
        u = np.linspace(0, 3, 40)
        grid = InducingGrid((u,))
        X = u[2:-2:3, None]
        th = Hyperparameters.from_natural(0.4, 1.1, 0.2)
        for fam in FAMILIES:
            ski = materialize(build_ski_operator(KernelSpec(fam), th, X, grid))
            dense = materialize(build_dense_kernel(KernelSpec(fam), th, X))
            np.testing.assert_allclose(ski, dense, atol=1e-10)

    @pytest.mark.parametrize("family", ["rbf", "matern12", "matern52"])
    def test_diag_correction_exact(self, family, rng):
        X = rng.uniform(0, 4, (300, 1))
        grid = InducingGrid.from_data(X, [64])
        th = Hyperparameters.from_natural(0.3, 1.3, 0.1)
        K = materialize(build_ski_operator(KernelSpec(family), th, X, grid, diag_correct=True))
        np.testing.assert_allclose(np.diag(K) - 0.01, 1.3**2, rtol=0, atol=1e-12)

    def test_ski_close_to_dense(self, rng):
        X = rng.uniform(0, 4, (300, 1))
        grid = InducingGrid.from_data(X, [100])
        th = Hyperparameters.from_natural(0.5, 1.0, 0.1)
        ski = materialize(build_ski_operator(KernelSpec("rbf"), th, X, grid))
        dense = materialize(build_dense_kernel(KernelSpec("rbf"), th, X))
        assert np.max(np.abs(ski - dense)) < 1e-3

    def test_inner_structure(self, rng):
        th1 = Hyperparameters.from_natural(0.5, 1.0, 0.1)
        X1 = rng.uniform(0, 1, (30, 1))
        op = build_ski_operator(KernelSpec("rbf"), th1, X1, InducingGrid.from_data(X1, [20]))
        assert isinstance(op.inner, ToeplitzOperator)
        X2 = rng.uniform(0, 1, (30, 2))
        op2 = build_ski_operator(KernelSpec("rbf"), th1, X2, InducingGrid.from_data(X2, [10, 12]))
        assert isinstance(op2.inner, KroneckerOperator)
        assert np.all(op.diag == 0) if op.diag is not None else True
        assert op.noise_var == pytest.approx(0.01)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_grid_kernel_matches_dense(self, family):
        grid = InducingGrid((np.linspace(0, 1, 7), np.linspace(0, 2, 6)))
        th = Hyperparameters.from_natural([0.4, 0.9], 1.2, 0.1)
        spec = KernelSpec(family, isotropic=False)
        np.testing.assert_allclose(
            grid_kernel_matrix(spec, th, grid), kernel_matrix(spec, th, grid.points()), atol=1e-12
        )


class TestDiagCorrection:
    def test_on_node_zero(self):
        u = np.linspace(0, 3, 30)
        grid = InducingGrid((u,))
        X = u[[5, 10, 20], None]
        W = build_interp_weights(X, grid)
        th = Hyperparameters.from_natural(0.4, 1.0, 0.1)
        np.testing.assert_allclose(ski_diag_correction(W, grid, KernelSpec("rbf"), th, X), 0.0, atol=1e-12)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_matches_dense_quadratic_form(self, family, rng):
        X = rng.uniform(0, 2, (50, 2))
        grid = InducingGrid.from_data(X, [9, 11])
        th = Hyperparameters.from_natural([0.5, 0.7], 1.1, 0.1)
        spec = KernelSpec(family, isotropic=False)
        W = build_interp_weights(X, grid)
        D = ski_diag_correction(W, grid, spec, th, X)
        Kuu = kernel_matrix(spec, th, grid.points())
        Wd = W.toarray()
        ref = 1.1**2 - np.einsum("ij,jk,ik->i", Wd, Kuu, Wd)
        np.testing.assert_allclose(D, ref, atol=1e-12)


class TestDerivativeOperators:
    def test_noise(self, rng):
        X = rng.uniform(size=(10, 1))
        th = Hyperparameters.from_natural(0.5, 1.0, 0.3)
        v = rng.standard_normal(10)
        op = derivative_operator(KernelSpec("rbf"), th, X, 2)
        np.testing.assert_allclose(op.matvec(v), 2 * 0.09 * v)

    @pytest.mark.parametrize("use_grid", [False, True])
    def test_signal(self, rng, use_grid):
        X = rng.uniform(0, 1, (40, 1))
        grid = InducingGrid.from_data(X, [30]) if use_grid else None
        th = Hyperparameters.from_natural(0.3, 1.2, 0.2)
        K = materialize(build_ski_operator(KernelSpec("matern32"), th, X, grid)) if use_grid else \
            materialize(build_dense_kernel(KernelSpec("matern32"), th, X))
        dK = materialize(derivative_operator(KernelSpec("matern32"), th, X, 1, grid=grid))
        np.testing.assert_allclose(dK, 2 * (K - 0.04 * np.eye(40)), atol=1e-12)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_lengthscale_fd_dense(self, family, rng):
        X = rng.uniform(0, 2, (60, 1))
        spec = KernelSpec(family)
        base = Hyperparameters.from_natural(0.4, 1.0, 0.1).to_vector()
        h = 1e-5

        def K(v):
            return materialize(build_dense_kernel(spec, Hyperparameters.from_vector(v, 1), X))

        fd = (K(base + [h, 0, 0]) - K(base - [h, 0, 0])) / (2 * h)
        dK = materialize(derivative_operator(spec, Hyperparameters.from_vector(base, 1), X, 0))
        assert max_rel(dK, fd) < 1e-6

    @pytest.mark.parametrize("diag_correct", [False, True])
    @pytest.mark.parametrize("family", ["rbf", "matern32"])
    def test_ski_derivatives_fd(self, family, diag_correct, rng):
        X = rng.uniform(0, 2, (50, 2))
        grid = InducingGrid.from_data(X, [10, 9])
        spec = KernelSpec(family, isotropic=False)
        base = Hyperparameters.from_natural([0.6, 0.8], 1.1, 0.2).to_vector()

        def K(v):
            return materialize(build_ski_operator(spec, Hyperparameters.from_vector(v, 2), X, grid, diag_correct))

        theta = Hyperparameters.from_vector(base, 2)
        ops = derivative_operators(spec, theta, X, grid, diag_correct)
        for i, op in enumerate(ops):
            e = np.zeros(4)
            e[i] = 1e-5
            fd = (K(base + e) - K(base - e)) / 2e-5
            assert max_rel(materialize(op), fd) < 1e-6

    def test_second_derivative_fd(self, rng):
        X = rng.uniform(0, 2, (30, 1))
        spec = KernelSpec("matern52")
        base = Hyperparameters.from_natural(0.5, 1.3, 0.2).to_vector()

        def dK(v, i):
            return materialize(derivative_operator(spec, Hyperparameters.from_vector(v, 1), X, i))

        d2 = second_derivative_operators(spec, Hyperparameters.from_vector(base, 1), X)
        for i in range(3):
            for j in range(3):
                e = np.zeros(3)
                e[j] = 1e-5
                fd = (dK(base + e, i) - dK(base - e, i)) / 2e-5
                np.testing.assert_allclose(materialize(d2[i][j]), fd, atol=1e-6 * max(1, np.abs(fd).max()))

    def test_symmetric(self, rng):
        X = rng.uniform(0, 2, (30, 2))
        grid = InducingGrid.from_data(X, [8, 8])
        th = Hyperparameters.from_natural(0.5, 1.3, 0.2)
        for g in (None, grid):
            for op in derivative_operators(KernelSpec("matern12"), th, X, g, diag_correct=g is not None):
                M = materialize(op)
                assert np.max(np.abs(M - M.T)) <= 1e-12 * max(np.abs(M).max(), 1.0)

    def test_index_out_of_range(self, rng):
        th = Hyperparameters.from_natural(0.5, 1.3, 0.2)
        with pytest.raises(ContractViolation):
            derivative_operator(KernelSpec("rbf"), th, np.zeros((3, 1)), 3)


@settings(max_examples=25, deadline=None)
@given(family=st.sampled_from(FAMILIES), seed=st.integers(0, 2**31), ell=st.floats(0.05, 5.0))
def test_kernel_grad_property(family, seed, ell):
    r = np.random.default_rng(seed)
    x, x2 = r.standard_normal((2, 3))
    base = Hyperparameters.from_natural(ell, 0.9, 0.1).to_vector()
    spec = KernelSpec(family)
    fd = central_diff(lambda v: kernel_eval(spec, Hyperparameters.from_vector(v, 1), x, x2), base)[:-1]
    g = kernel_grad(spec, Hyperparameters.from_vector(base, 1), x, x2)
    assert np.all(np.abs(g - fd) <= 1e-6 * np.maximum(np.abs(fd), 1e-3))
