"""Lanczos tridiagonalization with full reorthogonalization."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import InvalidProbeError, NumericalError

BREAKDOWN_RTOL = 1e-10


@dataclass(frozen=True)
class LanczosDecomposition:
    """Partial decomposition ``A Q = Q T + beta_k q_{k+1} e_k^T``.

    ``Q`` holds the ``k`` Lanczos vectors as columns; ``alpha`` and ``beta``
    are the diagonal and off-diagonal of ``T``. ``k`` is smaller than the
    requested number of steps only after an invariant subspace was found.
    """

    Q: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    residual_beta: float
    start_norm: float

    @property
    def k(self):
        return len(self.alpha)

    @property
    def broke_down(self):
        return self.residual_beta < BREAKDOWN_RTOL * self.start_norm

    def tridiagonal(self):
        return np.diag(self.alpha) + np.diag(self.beta, 1) + np.diag(self.beta, -1)

    def ritz(self):
        """Eigenvalues of ``T`` and the first components of its eigenvectors."""
        if self.k == 1:
            return self.alpha.copy(), np.ones(1)
        theta, S = scipy.linalg.eigh_tridiagonal(self.alpha, self.beta)
        return theta, S[0, :]


def lanczos_decompose(op, z, m):
    """Run ``m`` Lanczos steps on ``op`` started from ``z``.

    Every new vector is reorthogonalized against all previous ones (two
    classical Gram-Schmidt passes), which keeps ``Q`` orthonormal to working
    precision at the cost of ``O(n m^2)`` flops. The iteration stops early
    when the next off-diagonal falls below ``1e-10 * ||z||``.
    """
    z = np.asarray(z, dtype=float)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    znorm = float(np.linalg.norm(z))
    if not np.isfinite(znorm) or znorm == 0.0:
        raise InvalidProbeError("Lanczos start vector must be nonzero and finite")

    n = z.shape[0]
    m = min(m, n)
    Q = np.empty((n, m))
    alpha = np.empty(m)
    beta = np.empty(max(m - 1, 0))
    Q[:, 0] = z / znorm
    tol = BREAKDOWN_RTOL * znorm
    res = 0.0
    k = m
    for j in range(m):
        v = op.matvec(Q[:, j])
        a = Q[:, j] @ v
        if not np.isfinite(a):
            raise NumericalError("non-finite Lanczos coefficient", step=j)
        alpha[j] = a
        basis = Q[:, : j + 1]
        v = v - basis @ (basis.T @ v)
        v = v - basis @ (basis.T @ v)
        res = float(np.linalg.norm(v))
        if j == m - 1:
            break
        if res < tol:
            k = j + 1
            break
        beta[j] = res
        Q[:, j + 1] = v / res
    return LanczosDecomposition(
        Q=Q[:, :k].copy(),
        alpha=alpha[:k].copy(),
        beta=beta[: k - 1].copy(),
        residual_beta=res,
        start_norm=znorm,
    )
