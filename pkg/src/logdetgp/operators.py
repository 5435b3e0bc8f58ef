"""Matrix-free symmetric linear operators and the solvers built on them.

Every operator exposes ``dim`` and ``matvec``; ``matvec`` accepts either a
vector of length ``dim`` or a block of shape ``(dim, k)`` and returns an
array of the same shape. Operators are immutable after construction.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse

from .exceptions import ContractViolation, InvalidProbeError, NumericalError
from .lanczos import lanczos_decompose

__all__ = [
    "LinearOperator",
    "DenseOperator",
    "ToeplitzOperator",
    "KroneckerOperator",
    "SkiOperator",
    "ScaledIdentity",
    "DiagonalOperator",
    "ScaledOperator",
    "SumOperator",
    "CountingOperator",
    "ProbeSet",
    "apply",
    "materialize",
    "rademacher_probes",
    "cg_solve",
    "extremal_eigs",
]


def _next_pow2(k):
    return 1 << max(int(k) - 1, 0).bit_length()


class LinearOperator:
    """Base class: a symmetric ``dim x dim`` matrix known through its action."""

    dim: int

    @property
    def shape(self):
        return (self.dim, self.dim)

    def matvec(self, v):
        v = self._check(v)
        return self._matvec(v)

    def _matvec(self, v):
        raise NotImplementedError

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim not in (1, 2) or v.shape[0] != self.dim:
            raise ContractViolation(
                f"{type(self).__name__} of dim {self.dim} cannot act on shape {v.shape}"
            )
        return v

    def to_dense(self):
        return self.matvec(np.eye(self.dim))

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class DenseOperator(LinearOperator):
    def __init__(self, matrix, check_symmetric=True):
        A = np.array(matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ContractViolation(f"dense payload must be square, got {A.shape}")
        if check_symmetric and A.size:
            scale = np.max(np.abs(A))
            if np.max(np.abs(A - A.T)) > 1e-12 * scale:
                raise ContractViolation("dense payload is not symmetric")
        self.matrix = A
        self.dim = A.shape[0]

    def _matvec(self, v):
        return self.matrix @ v

    def to_dense(self):
        return self.matrix.copy()


class ToeplitzOperator(LinearOperator):
    """Symmetric (multilevel) Toeplitz matrix applied by circulant embedding.

    ``first_column`` is a vector for an ordinary symmetric Toeplitz matrix.
    A ``d``-dimensional array gives the multilevel (block Toeplitz with
    Toeplitz blocks) matrix of a stationary kernel on a regular grid, with
    entry ``[i, j]`` equal to ``first_column[|i - j|]`` componentwise over the
    C-ordered multi-indices. Each axis is embedded in a circulant of length
    the next power of two at least ``2 m - 1``.
    """

    def __init__(self, first_column):
        t = np.array(first_column, dtype=float)
        if t.ndim == 0 or t.size == 0:
            raise ContractViolation("Toeplitz first column must be non-empty")
        self.first_column = t
        self.grid_shape = t.shape
        self.dim = int(t.size)
        self._embed_shape = tuple(_next_pow2(2 * m - 1) for m in t.shape)
        c = np.zeros(self._embed_shape)
        c[tuple(slice(0, m) for m in t.shape)] = t
        for ax, (m, L) in enumerate(zip(t.shape, self._embed_shape)):
            if m > 1:
                src = [slice(None)] * t.ndim
                dst = [slice(None)] * t.ndim
                src[ax] = slice(m - 1, 0, -1)
                dst[ax] = slice(L - m + 1, L)
                c[tuple(dst)] = c[tuple(src)]
        self._axes = tuple(range(t.ndim))
        self._eig = scipy.fft.rfftn(c, axes=self._axes)

    def _matvec(self, v):
        one = v.ndim == 1
        V = v.reshape(self.grid_shape + ((1,) if one else (v.shape[1],)))
        F = scipy.fft.rfftn(V, s=self._embed_shape, axes=self._axes)
        F *= self._eig[..., None]
        out = scipy.fft.irfftn(F, s=self._embed_shape, axes=self._axes)
        out = out[tuple(slice(0, m) for m in self.grid_shape)]
        return out.reshape(v.shape)

    def to_dense(self):
        if len(self.grid_shape) == 1:
            return scipy.linalg.toeplitz(self.first_column)
        return super().to_dense()


class KroneckerOperator(LinearOperator):
    """``A_1 kron A_2 kron ... kron A_k`` applied factor by factor."""

    def __init__(self, factors):
        factors = list(factors)
        if not factors:
            raise ContractViolation("Kronecker product needs at least one factor")
        self.factors = [f if isinstance(f, LinearOperator) else DenseOperator(f) for f in factors]
        self.sizes = tuple(f.dim for f in self.factors)
        self.dim = int(np.prod(self.sizes))

    def _matvec(self, v):
        one = v.ndim == 1
        k = 1 if one else v.shape[1]
        X = v.reshape(self.sizes + (k,))
        for ax, f in enumerate(self.factors):
            X = np.moveaxis(X, ax, 0)
            shp = X.shape
            X = f.matvec(X.reshape(shp[0], -1)).reshape(shp)
            X = np.moveaxis(X, 0, ax)
        return X.reshape(v.shape)

    def to_dense(self):
        out = np.ones((1, 1))
        for f in self.factors:
            out = np.kron(out, f.to_dense())
        return out


class SkiOperator(LinearOperator):
    """``W inner W^T + diag(diag) + noise_var * I`` with sparse ``W``."""

    def __init__(self, W, inner, diag=None, noise_var=0.0):
        W = scipy.sparse.csr_matrix(W)
        if W.shape[1] != inner.dim:
            raise ContractViolation(
                f"interpolation weights have {W.shape[1]} columns, inner operator dim {inner.dim}"
            )
        if noise_var < 0:
            raise ContractViolation("noise variance must be nonnegative")
        self.W = W
        self.Wt = W.T.tocsr()
        self.inner = inner
        self.dim = W.shape[0]
        self.diag = np.zeros(self.dim) if diag is None else np.asarray(diag, dtype=float)
        if self.diag.shape != (self.dim,):
            raise ContractViolation("diagonal correction has the wrong length")
        self.noise_var = float(noise_var)

    def _matvec(self, v):
        out = self.W @ self.inner.matvec(self.Wt @ v)
        scale = self.diag + self.noise_var
        return out + (scale * v.T).T


class ScaledIdentity(LinearOperator):
    def __init__(self, dim, scale):
        self.dim = int(dim)
        self.scale = float(scale)

    def _matvec(self, v):
        return self.scale * v


class DiagonalOperator(LinearOperator):
    def __init__(self, diagonal):
        self.diagonal = np.asarray(diagonal, dtype=float).ravel()
        self.dim = self.diagonal.size

    def _matvec(self, v):
        return (self.diagonal * v.T).T


class ScaledOperator(LinearOperator):
    def __init__(self, op, scale):
        self.op = op
        self.scale = float(scale)
        self.dim = op.dim

    def _matvec(self, v):
        return self.scale * self.op.matvec(v)


class SumOperator(LinearOperator):
    def __init__(self, *ops):
        if len({op.dim for op in ops}) != 1:
            raise ContractViolation("summands must share a dimension")
        self.ops = ops
        self.dim = ops[0].dim

    def _matvec(self, v):
        out = self.ops[0].matvec(v)
        for op in self.ops[1:]:
            out = out + op.matvec(v)
        return out


class CountingOperator(LinearOperator):
    """Delegating wrapper that counts matrix-vector products.

    A block of ``k`` columns counts as ``k`` products.
    """

    def __init__(self, op):
        self.op = op
        self.dim = op.dim
        self.count = 0

    def _matvec(self, v):
        self.count += 1 if v.ndim == 1 else v.shape[1]
        return self.op.matvec(v)

    def reset(self):
        self.count = 0


def apply(op, v):
    """Multiply ``op`` with a vector (or a block of column vectors)."""
    return op.matvec(v)


def materialize(op):
    """Dense ``ndarray`` of the matrix represented by ``op``."""
    return op.to_dense()


@dataclass(frozen=True)
class ProbeSet:
    """``n_z`` Rademacher vectors of length ``n``; rows of ``vectors``."""

    n: int
    n_z: int
    seed: int
    vectors: np.ndarray = field(repr=False)

    @property
    def matrix(self):
        """Probes as columns, shape ``(n, n_z)``."""
        return self.vectors.T

    def __len__(self):
        return self.n_z

    def __getitem__(self, i):
        return self.vectors[i]

    def pairs(self):
        """Consecutive probes as independent ``(z, w)`` pairs."""
        if self.n_z % 2:
            raise ContractViolation(f"pairing needs an even probe count, got {self.n_z}")
        return self.vectors[0::2], self.vectors[1::2]


def rademacher_probes(n, n_z, seed):
    """Deterministic i.i.d. +-1 probe vectors."""
    if n < 1 or n_z < 1:
        raise ContractViolation(f"need n >= 1 and n_z >= 1, got n={n}, n_z={n_z}")
    rng = np.random.default_rng(np.uint64(int(seed) % 2**64))
    bits = rng.integers(0, 2, size=(n_z, n), dtype=np.int8)
    return ProbeSet(n=int(n), n_z=int(n_z), seed=int(seed), vectors=2.0 * bits - 1.0)


def cg_solve(op, rhs, tol=1e-10, max_iter=None):
    """Unpreconditioned conjugate gradients for an SPD operator.

    ``rhs`` may be a vector or a block of columns solved independently (but
    vectorized). Returns ``(x, iterations, residual_norm)`` where the residual
    norm is recomputed from ``op @ x - rhs`` once the recursive residual has
    converged; hitting ``max_iter`` is reported, not raised.
    """
    b = np.asarray(rhs, dtype=float)
    if b.shape[0] != op.dim:
        raise ContractViolation(f"rhs has length {b.shape[0]}, operator dim {op.dim}")
    if tol <= 0:
        raise ContractViolation("tol must be positive")
    one = b.ndim == 1
    B = b[:, None] if one else b
    max_iter = 10 * op.dim if max_iter is None else int(max_iter)

    bnorm = np.linalg.norm(B, axis=0)
    target = tol * bnorm
    X = np.zeros_like(B)
    R = B.copy()
    rnorm = bnorm.copy()
    active = rnorm > target
    P = R.copy()
    rr = rnorm**2
    it = 0
    while active.any() and it < max_iter:
        it += 1
        idx = np.flatnonzero(active)
        Pa = P[:, idx]
        AP = op.matvec(Pa)
        pAp = np.einsum("ij,ij->j", Pa, AP)
        if not np.all(np.isfinite(pAp)) or np.any(pAp <= 0):
            raise NumericalError("conjugate gradients broke down", step=it)
        a = rr[idx] / pAp
        X[:, idx] += a * Pa
        R[:, idx] -= a * AP
        rr_new = np.einsum("ij,ij->j", R[:, idx], R[:, idx])
        if not np.all(np.isfinite(rr_new)):
            raise NumericalError("non-finite residual in conjugate gradients", step=it)
        P[:, idx] = R[:, idx] + (rr_new / rr[idx]) * Pa
        rr[idx] = rr_new
        conv = idx[np.sqrt(rr_new) <= target[idx]]
        if conv.size:
            # Confirm against the true residual; restart from it on drift.
            Rtrue = B[:, conv] - op.matvec(X[:, conv])
            tnorm = np.linalg.norm(Rtrue, axis=0)
            ok = tnorm <= target[conv]
            active[conv[ok]] = False
            bad = conv[~ok]
            R[:, bad] = Rtrue[:, ~ok]
            P[:, bad] = Rtrue[:, ~ok]
            rr[bad] = tnorm[~ok] ** 2
    res = np.linalg.norm(B - op.matvec(X), axis=0)
    if one:
        return X[:, 0], it, float(res[0])
    return X, it, res


def extremal_eigs(op, probes, m=20):
    """Smallest and largest Ritz values of an ``m``-step Lanczos run.

    The run starts from the first probe. Both are estimates: the largest
    Ritz value never exceeds ``lambda_max`` and the smallest is never below
    ``lambda_min``, so callers needing enclosing bounds must inflate them.
    """
    if m < 2:
        raise ContractViolation("extremal_eigs needs m >= 2")
    z = probes[0] if isinstance(probes, ProbeSet) else np.asarray(probes, dtype=float)
    if not np.any(z):
        raise InvalidProbeError("zero start vector for extremal eigenvalue estimate")
    dec = lanczos_decompose(op, z, m)
    theta, _ = dec.ritz()
    return float(theta.min()), float(theta.max())
