"""Stationary covariance kernels, SKI interpolation and derivative operators.

Hyperparameters live in log space. The parameter vector is ordered as
``(log l_1, ..., log l_p, log s_f, log sigma)`` with ``p = 1`` for an
isotropic kernel and ``p = d`` for per-dimension lengthscales, and every
derivative in this module is taken with respect to those log parameters.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse

from .exceptions import ContractViolation, DenseSizeError, OutOfGridError
from .operators import (
    DenseOperator,
    KroneckerOperator,
    ScaledIdentity,
    SkiOperator,
    ToeplitzOperator,
)

DENSE_CAP = 4096

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)


class Family(str, Enum):
    RBF = "rbf"
    MATERN12 = "matern12"
    MATERN32 = "matern32"
    MATERN52 = "matern52"


@dataclass(frozen=True)
class KernelSpec:
    family: Family = Family.RBF
    isotropic: bool = True

    def __post_init__(self):
        fam = self.family if isinstance(self.family, Family) else Family(str(self.family).lower())
        object.__setattr__(self, "family", fam)

    @property
    def name(self):
        return self.family.value


@dataclass(frozen=True)
class Hyperparameters:
    """Kernel and noise parameters, stored as logarithms."""

    log_lengthscales: np.ndarray
    log_signal: float
    log_noise: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "log_lengthscales", ls)
        object.__setattr__(self, "log_signal", float(self.log_signal))
        object.__setattr__(self, "log_noise", float(self.log_noise))
        # log_signal = -inf is tolerated as the degenerate zero-signal prior.
        if not np.all(np.isfinite(ls)) or not np.isfinite(self.log_noise):
            raise ContractViolation("hyperparameters must be finite")
        if np.isnan(self.log_signal) or self.log_signal == np.inf:
            raise ContractViolation("log signal must be finite")

    @classmethod
    def from_natural(cls, lengthscale, signal, noise):
        return cls(np.log(np.atleast_1d(lengthscale)), np.log(signal), np.log(noise))

    @classmethod
    def from_vector(cls, vec, n_lengthscales=None):
        vec = np.asarray(vec, dtype=float)
        p = len(vec) - 2 if n_lengthscales is None else n_lengthscales
        return cls(vec[:p], vec[p], vec[p + 1])

    def to_vector(self):
        return np.concatenate([self.log_lengthscales, [self.log_signal, self.log_noise]])

    @property
    def lengthscales(self):
        return np.exp(self.log_lengthscales)

    @property
    def signal(self):
        return float(np.exp(self.log_signal))

    @property
    def noise(self):
        return float(np.exp(self.log_noise))

    @property
    def n_params(self):
        return len(self.log_lengthscales) + 2

    def names(self):
        p = len(self.log_lengthscales)
        ls = ["log_lengthscale"] if p == 1 else [f"log_lengthscale_{a + 1}" for a in range(p)]
        return ls + ["log_signal", "log_noise"]


@dataclass(frozen=True)
class DataSet:
    X: np.ndarray
    y: np.ndarray
    mean: float = 0.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ContractViolation(f"X must be a non-empty n x d array, got {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise ContractViolation(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.isfinite(self.mean)):
            raise ContractViolation("data contain NaN or Inf")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "mean", float(self.mean))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def with_sample_mean(self):
        return DataSet(self.X, self.y, float(np.mean(self.y)))


def _check_theta(spec, theta, d):
    p = len(theta.log_lengthscales)
    if spec.isotropic and p != 1:
        raise ContractViolation(f"isotropic kernel takes one lengthscale, got {p}")
    if not spec.isotropic and p != d:
        raise ContractViolation(f"per-dimension kernel needs {d} lengthscales, got {p}")


def _radial_parts(family, rho):
    """Profile ``g`` and the two radial factors used by the derivatives.

    With ``k = s^2 g(rho)`` and ``rho^2 = sum_a (d_a / l_a)^2``, the lengthscale
    derivatives are ``s^2 * first * Q_p`` and ``s^2 * (second * Q_p Q_r -
    2 delta_pr first * Q_p)`` where ``Q_p`` is the part of ``rho^2`` owned by
    parameter ``p``. Removable singularities at ``rho = 0`` are multiplied by
    ``Q`` terms that vanish there.
    """
    safe = np.where(rho > 0, rho, 1.0)
    if family is Family.RBF:
        g = np.exp(-0.5 * rho**2)
        return g, g, g
    if family is Family.MATERN12:
        e = np.exp(-rho)
        return e, e / safe, e * (1.0 + rho) / safe**3
    if family is Family.MATERN32:
        e = np.exp(-_SQRT3 * rho)
        return (1.0 + _SQRT3 * rho) * e, 3.0 * e, 3.0 * _SQRT3 * e / safe
    e = np.exp(-_SQRT5 * rho)
    g = (1.0 + _SQRT5 * rho + 5.0 * rho**2 / 3.0) * e
    return g, (5.0 / 3.0) * (1.0 + _SQRT5 * rho) * e, (25.0 / 3.0) * e


def _from_differences(spec, theta, diff, order):
    """Kernel value (and log-parameter derivatives) at difference vectors.

    Returns ``k`` for ``order=0``; ``(k, grads)`` for ``order=1``; and
    ``(k, grads, hess)`` for ``order=2``, where ``grads`` is a list over the
    kernel parameters ``(log l..., log s_f)`` and ``hess`` a nested list.
    """
    q = (diff / theta.lengthscales) ** 2
    rho2 = q.sum(axis=-1)
    rho = np.sqrt(rho2)
    s2 = theta.signal**2
    g, first, second = _radial_parts(spec.family, rho)
    k = s2 * g
    if order == 0:
        return k
    Q = [rho2] if spec.isotropic else [q[..., a] for a in range(q.shape[-1])]
    p = len(Q)
    dls = [s2 * first * Qp for Qp in Q]
    grads = dls + [2.0 * k]
    if order == 1:
        return k, grads
    hess = [[None] * (p + 1) for _ in range(p + 1)]
    for a in range(p):
        for b in range(a, p):
            h = s2 * second * Q[a] * Q[b]
            if a == b:
                h = h - 2.0 * dls[a]
            hess[a][b] = hess[b][a] = h
        hess[a][p] = hess[p][a] = 2.0 * dls[a]
    hess[p][p] = 4.0 * k
    return k, grads, hess


def _pair_diff(X1, X2):
    return X1[:, None, :] - X2[None, :, :]


def kernel_eval(spec, theta, x, x2):
    """Covariance between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise ContractViolation("points must have the same dimension")
    _check_theta(spec, theta, x.shape[0])
    return float(_from_differences(spec, theta, x - x2, 0))


def kernel_grad(spec, theta, x, x2):
    """Partials of :func:`kernel_eval` with respect to ``(log l..., log s_f)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    _check_theta(spec, theta, x.shape[0])
    _, grads = _from_differences(spec, theta, x - x2, 1)
    return np.array([float(g) for g in grads])


def kernel_hessian(spec, theta, x, x2):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    _check_theta(spec, theta, x.shape[0])
    _, _, hess = _from_differences(spec, theta, x - x2, 2)
    return np.array([[float(h) for h in row] for row in hess])


def kernel_matrix(spec, theta, X1, X2=None):
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = X1 if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
    _check_theta(spec, theta, X1.shape[1])
    return _from_differences(spec, theta, _pair_diff(X1, X2), 0)


def _check_cap(n, cap):
    if n > cap:
        raise DenseSizeError(
            f"dense kernel with n={n} exceeds the cap of {cap}; use an SKI grid instead"
        )


def build_dense_kernel(spec, theta, X, cap=DENSE_CAP):
    """Dense ``K + sigma^2 I``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_cap(X.shape[0], cap)
    K = kernel_matrix(spec, theta, X)
    K[np.diag_indices_from(K)] += theta.noise**2
    return DenseOperator(K, check_symmetric=False)


# --------------------------------------------------------------------------
# inducing grids and interpolation


@dataclass(frozen=True)
class InducingGrid:
    """Regular grid given as one equispaced, increasing axis per dimension."""

    axes: tuple

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float).ravel() for a in self.axes)
        for j, a in enumerate(axes):
            if a.size < 4:
                raise ContractViolation(f"grid axis {j} needs at least 4 points, has {a.size}")
            steps = np.diff(a)
            if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps[0]:
                raise ContractViolation(f"grid axis {j} must be increasing and equispaced")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_data(cls, X, sizes):
        """Grid with ``sizes[j]`` points spanning ``[min - 2h, max + 2h]`` per dimension."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        sizes = np.broadcast_to(np.atleast_1d(sizes), (X.shape[1],))
        axes = []
        for j, m in enumerate(sizes):
            m = int(m)
            if m < 6:
                raise ContractViolation("grid sizes below 6 leave no room for the margin")
            lo, hi = X[:, j].min(), X[:, j].max()
            if hi == lo:
                hi, lo = lo + 0.5, lo - 0.5
            h = (hi - lo) / (m - 5)
            axes.append(lo - 2 * h + h * np.arange(m))
        return cls(tuple(axes))

    @property
    def shape(self):
        return tuple(a.size for a in self.axes)

    @property
    def m(self):
        return int(np.prod(self.shape))

    @property
    def d(self):
        return len(self.axes)

    @property
    def spacing(self):
        return np.array([a[1] - a[0] for a in self.axes])

    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def offsets(self):
        """Grid offsets ``j * h`` in every dimension, shape ``grid.shape + (d,)``."""
        mesh = np.meshgrid(*[a - a[0] for a in self.axes], indexing="ij")
        return np.stack(mesh, axis=-1)


def _cubic_weights(s):
    """Four-point Lagrange weights for nodes at offsets -1, 0, 1, 2."""
    return np.stack(
        [
            -s * (s - 1.0) * (s - 2.0) / 6.0,
            (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
            -(s + 1.0) * s * (s - 2.0) / 2.0,
            (s + 1.0) * s * (s - 1.0) / 6.0,
        ],
        axis=-1,
    )


def build_interp_weights(X, grid):
    """Sparse local cubic interpolation weights onto ``grid``.

    Each dimension uses the 4-point cubic Lagrange stencil around the cell
    containing the point, so interpolation is exact for cubic polynomials and
    rows sum to one; the tensor product gives ``4**d`` stored entries per row
    (explicit zeros are kept so every row has the same layout).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if d != grid.d:
        raise ContractViolation(f"data have {d} dimensions, grid has {grid.d}")
    idx_parts, w_parts = [], []
    for j, axis in enumerate(grid.axes):
        m = axis.size
        h = axis[1] - axis[0]
        x = X[:, j]
        lo, hi = axis[1], axis[m - 2]
        slack = 1e-9 * h
        bad = np.flatnonzero((x < lo - slack) | (x > hi + slack))
        if bad.size:
            i = int(bad[0])
            raise OutOfGridError(i, j, float(x[i]), float(lo), float(hi))
        t = (x - axis[0]) / h
        k = np.clip(np.floor(t).astype(int), 1, m - 3)
        s = t - k
        idx_parts.append(k[:, None] + np.arange(-1, 3)[None, :])
        w_parts.append(_cubic_weights(s))
    strides = np.cumprod((grid.shape[1:] + (1,))[::-1])[::-1]
    cols = np.zeros((n, 1), dtype=np.int64)
    vals = np.ones((n, 1))
    for j in range(d):
        cols = (cols[:, :, None] + strides[j] * idx_parts[j][:, None, :]).reshape(n, -1)
        vals = (vals[:, :, None] * w_parts[j][:, None, :]).reshape(n, -1)
    S = cols.shape[1]
    indptr = np.arange(0, n * S + 1, S)
    W = scipy.sparse.csr_matrix((vals.ravel(), cols.ravel(), indptr), shape=(n, grid.m))
    W.has_sorted_indices = True
    return W


def _grid_component(spec, theta, grid, which):
    """Inner grid operator for the kernel value or one of its derivatives.

    ``which`` is ``()`` for the value, ``(i,)`` for a first derivative or
    ``(i, j)`` for a second derivative with respect to kernel parameters.
    """
    if which == () and grid.d > 1 and spec.family is Family.RBF:
        # Separable kernel: Kronecker product of one-dimensional Toeplitz factors.
        ls = np.broadcast_to(theta.lengthscales, (grid.d,))
        factors = []
        for a, axis in enumerate(grid.axes):
            off = axis - axis[0]
            col = np.exp(-0.5 * (off / ls[a]) ** 2)
            if a == 0:
                col = col * theta.signal**2
            factors.append(ToeplitzOperator(col))
        return KroneckerOperator(factors)
    parts = _from_differences(spec, theta, grid.offsets(), len(which))
    if which == ():
        col = parts
    elif len(which) == 1:
        col = parts[1][which[0]]
    else:
        col = parts[2][which[0]][which[1]]
    return ToeplitzOperator(col)


def _stencil_quadratic(W, grid, spec, theta, which):
    n = W.shape[0]
    S = W.indptr[1] - W.indptr[0] if n else 0
    cols = W.indices.reshape(n, S)
    w = W.data.reshape(n, S)
    U = grid.points()[cols]
    diff = U[:, :, None, :] - U[:, None, :, :]
    parts = _from_differences(spec, theta, diff, len(which))
    zero = np.zeros(grid.d)
    self_parts = _from_differences(spec, theta, zero, len(which))
    if which == ():
        K, k0 = parts, self_parts
    elif len(which) == 1:
        K, k0 = parts[1][which[0]], self_parts[1][which[0]]
    else:
        K, k0 = parts[2][which[0]][which[1]], self_parts[2][which[0]][which[1]]
    return float(k0) - np.einsum("ns,nst,nt->n", w, K, w)


def ski_diag_correction(W, grid, spec, theta, X=None, which=()):
    """Diagonal ``D`` making ``diag(W K_UU W^T + D)`` equal the exact kernel diagonal.

    Uses only the stencil entries of each row of ``W`` and direct kernel
    evaluations between those grid nodes: ``O(16**d)`` work per row. ``which``
    selects a derivative of ``D`` instead (see :func:`_grid_component`).
    """
    if X is not None and np.atleast_2d(X).shape[0] != W.shape[0]:
        raise ContractViolation("X and W disagree on the number of points")
    return _stencil_quadratic(scipy.sparse.csr_matrix(W), grid, spec, theta, which)


def build_ski_operator(spec, theta, X, grid, diag_correct=False, W=None):
    """``W K_UU W^T (+ D) + sigma^2 I`` as a :class:`SkiOperator`."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_theta(spec, theta, X.shape[1])
    if W is None:
        W = build_interp_weights(X, grid)
    inner = _grid_component(spec, theta, grid, ())
    diag = ski_diag_correction(W, grid, spec, theta) if diag_correct else None
    op = SkiOperator(W, inner, diag, theta.noise**2)
    op.grid = grid
    return op


def _kernel_index(theta, i):
    if not 0 <= i < theta.n_params:
        raise ContractViolation(f"parameter index {i} out of range for {theta.n_params} parameters")
    return i == theta.n_params - 1


def derivative_operators(spec, theta, X, grid=None, diag_correct=False, W=None, cap=DENSE_CAP):
    """All first-derivative operators ``dK~/d theta_i`` in parameter order."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_theta(spec, theta, X.shape[1])
    n = X.shape[0]
    noise_op = ScaledIdentity(n, 2.0 * theta.noise**2)
    if grid is None:
        _check_cap(n, cap)
        _, grads = _from_differences(spec, theta, _pair_diff(X, X), 1)
        return [DenseOperator(g, check_symmetric=False) for g in grads] + [noise_op]
    if W is None:
        W = build_interp_weights(X, grid)
    ops = []
    for i in range(theta.n_params - 1):
        inner = _grid_component(spec, theta, grid, (i,))
        diag = ski_diag_correction(W, grid, spec, theta, which=(i,)) if diag_correct else None
        ops.append(SkiOperator(W, inner, diag, 0.0))
    return ops + [noise_op]


def derivative_operator(spec, theta, X, i, grid=None, diag_correct=False, W=None, cap=DENSE_CAP):
    """Operator for ``dK~/d theta_i`` (dense when ``grid`` is None, SKI otherwise)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if _kernel_index(theta, i):
        return ScaledIdentity(X.shape[0], 2.0 * theta.noise**2)
    if grid is None:
        _check_theta(spec, theta, X.shape[1])
        _check_cap(X.shape[0], cap)
        _, grads = _from_differences(spec, theta, _pair_diff(X, X), 1)
        return DenseOperator(grads[i], check_symmetric=False)
    if W is None:
        W = build_interp_weights(X, grid)
    inner = _grid_component(spec, theta, grid, (i,))
    diag = ski_diag_correction(W, grid, spec, theta, which=(i,)) if diag_correct else None
    return SkiOperator(W, inner, diag, 0.0)


def second_derivative_operators(spec, theta, X, grid=None, diag_correct=False, W=None, cap=DENSE_CAP):
    """Nested list of ``d^2 K~ / d theta_i d theta_j`` operators (symmetric)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_theta(spec, theta, X.shape[1])
    n = X.shape[0]
    P = theta.n_params
    out = [[ScaledIdentity(n, 0.0) for _ in range(P)] for _ in range(P)]
    out[P - 1][P - 1] = ScaledIdentity(n, 4.0 * theta.noise**2)
    if grid is None:
        _check_cap(n, cap)
        _, _, hess = _from_differences(spec, theta, _pair_diff(X, X), 2)
        for i in range(P - 1):
            for j in range(i, P - 1):
                out[i][j] = out[j][i] = DenseOperator(hess[i][j], check_symmetric=False)
        return out
    if W is None:
        W = build_interp_weights(X, grid)
    for i in range(P - 1):
        for j in range(i, P - 1):
            inner = _grid_component(spec, theta, grid, (i, j))
            diag = ski_diag_correction(W, grid, spec, theta, which=(i, j)) if diag_correct else None
            out[i][j] = out[j][i] = SkiOperator(W, inner, diag, 0.0)
    return out


def grid_kernel_matrix(spec, theta, grid, which=()):
    """Dense ``K_UU`` (or a derivative of it) on the grid."""
    return _grid_component(spec, theta, grid, which).to_dense()
