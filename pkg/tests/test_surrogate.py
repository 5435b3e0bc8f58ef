import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff
from logdetgp import (
    ContractViolation,
    GeometryError,
    Hyperparameters,
    KernelSpec,
    SurrogateModel,
    build_surrogate,
    choose_design_points,
    kernel_matrix,
    surrogate_eval,
)


class TestDesign:
    def test_one_dimensional(self):
        a = choose_design_points([(0.0, 1.0)], 3, seed=4)
        b = choose_design_points([(0.0, 1.0)], 3, seed=4)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (3, 1) and len(np.unique(a)) == 3
        assert a.min() >= 0.0 and a.max() <= 1.0

    @pytest.mark.parametrize("corners", ["auto", False])
    def test_strata(self, corners):
        pts = choose_design_points([(-1.0, 2.0), (3.0, 5.0)], 50, seed=0, corners=corners)
        for j, (lo, hi) in enumerate([(-1.0, 2.0), (3.0, 5.0)]):
            strata = np.floor((pts[:, j] - lo) / (hi - lo) * 50).clip(0, 49)
            assert len(np.unique(strata)) == 50

    def test_corners_included(self):
        pts = choose_design_points([(0.0, 1.0), (0.0, 2.0)], 20, seed=1, corners=True)
        for c in [(0, 0), (0, 2), (1, 0), (1, 2)]:
            assert np.any(np.all(np.isclose(pts, c), axis=1))

    def test_one_dimensional_hits_bounds(self):
        pts = choose_design_points([(2.0, 5.0)], 10, seed=2)
        assert pts.min() == 2.0 and pts.max() == 5.0

    def test_distinct(self):
        pts = choose_design_points([(0, 1), (0, 1), (0, 1)], 30, seed=3, corners=True)
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        assert d[np.triu_indices(30, 1)].min() > 0

    @pytest.mark.parametrize("bounds,count", [([(1.0, 0.0)], 5), ([(0.0, np.inf)], 5), ([(0.0, 1.0), (0.0, 1.0)], 3)])
    def test_errors(self, bounds, count):
        with pytest.raises(ContractViolation):
            choose_design_points(bounds, count)


class TestBuild:
    def test_linear_reproduction(self, rng):
        pts = rng.uniform(-1, 1, (15, 2))
        a, b = 0.7, np.array([1.5, -2.0])
        model = build_surrogate(pts, a + pts @ b)
        np.testing.assert_allclose(model.lam, 0.0, atol=1e-10)
        np.testing.assert_allclose(model.poly, [a, *b], atol=1e-10)
        for x in rng.uniform(-2, 2, (5, 2)):
            v, g = surrogate_eval(model, x)
            assert v == pytest.approx(a + x @ b, abs=1e-10)
            np.testing.assert_allclose(g, b, atol=1e-10)

    def test_minimal_design(self, rng):
        pts = rng.uniform(0, 1, (4, 2))
        vals = rng.standard_normal(4)
        model = build_surrogate(pts, vals)
        for p, v in zip(pts, vals):
            assert model(p) == pytest.approx(v, abs=1e-8)

    def test_invariants(self, rng):
        pts = rng.uniform(0, 1, (30, 3))
        vals = np.sin(pts).sum(axis=1)
        model = build_surrogate(pts, vals)
        for p, v in zip(pts, vals):
            assert abs(model(p) - v) <= 1e-8 * max(abs(v), 1.0)
        np.testing.assert_allclose(np.hstack([np.ones((30, 1)), pts]).T @ model.lam, 0.0, atol=1e-10)

    def test_duplicate_points(self):
        with pytest.raises(GeometryError):
            build_surrogate([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [1, 2, 3, 4])

    def test_collinear_points(self):
        pts = np.column_stack([np.linspace(0, 1, 6), np.linspace(0, 2, 6)])
        with pytest.raises(GeometryError):
            build_surrogate(pts, np.arange(6.0))

    def test_nonfinite_values(self):
        with pytest.raises(ContractViolation):
            build_surrogate([[0.0], [1.0], [2.0]], [0.0, np.nan, 1.0])

    def test_leave_one_out_logdet(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 4, (150, 1))
        spec = KernelSpec("rbf")

        def logdet(log_ell):
            th = Hyperparameters(np.array([log_ell]), 0.0, np.log(0.1))
            K = kernel_matrix(spec, th, X) + 0.01 * np.eye(150)
            return 2 * np.sum(np.log(np.diag(scipy.linalg.cholesky(K))))

        design = np.linspace(np.log(0.1), np.log(1.0), 20)
        vals = np.array([logdet(t) for t in design])
        model = build_surrogate(design[:, None], vals)
        mids = 0.5 * (design[1:] + design[:-1])
        err = max(abs(model(np.array([t])) - logdet(t)) for t in mids)
        assert err < 0.01 * np.ptp(vals)


class TestEval:
    def test_gradient_fd(self, rng):
        pts = rng.uniform(-1, 1, (25, 3))
        model = build_surrogate(pts, rng.standard_normal(25))
        for x in rng.uniform(-1, 1, (5, 3)):
            _, g = surrogate_eval(model, x)
            fd = central_diff(lambda t: model(t), x, h=1e-6)
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())

    def test_gradient_continuous_at_design_points(self, rng):
        pts = rng.uniform(-1, 1, (10, 2))
        model = build_surrogate(pts, rng.standard_normal(10))
        g0 = surrogate_eval(model, pts[3])[1]
        g1 = surrogate_eval(model, pts[3] + 1e-9)[1]
        np.testing.assert_allclose(g0, g1, atol=1e-6)

    def test_wrong_dimension(self, rng):
        model = build_surrogate(rng.uniform(size=(6, 2)), rng.standard_normal(6))
        with pytest.raises(ContractViolation):
            surrogate_eval(model, [0.0, 0.0, 0.0])


class TestSerialization:
    def test_roundtrip(self, rng, tmp_path):
        model = build_surrogate(rng.uniform(size=(8, 2)), rng.standard_normal(8), {"kernel": "rbf", "bounds": [[0, 1], [0, 1]]})
        path = tmp_path / "model.json"
        model.to_json(path)
        doc = json.loads(path.read_text())
        assert doc["format"] == "cubic-rbf-linear-tail" and doc["metadata"]["kernel"] == "rbf"
        back = SurrogateModel.from_json(path)
        x = rng.uniform(size=2)
        assert back(x) == model(x)
        assert SurrogateModel.from_json(model.to_json())(x) == model(x)

    def test_rejects_foreign_document(self):
        with pytest.raises(ContractViolation):
            SurrogateModel.from_dict({"format": "other"})


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(1, 3), extra=st.integers(1, 20))
def test_linear_reproduction_property(seed, d, extra):
    r = np.random.default_rng(seed)
    pts = r.uniform(-3, 3, (d + 1 + extra, d))
    coef = r.standard_normal(d + 1)
    model = build_surrogate(pts, coef[0] + pts @ coef[1:])
    x = r.uniform(-3, 3, d)
    v, g = surrogate_eval(model, x)
    assert abs(v - (coef[0] + x @ coef[1:])) < 1e-8 * (1 + np.abs(coef).sum() * 3)
    np.testing.assert_allclose(g, coef[1:], atol=1e-8)
