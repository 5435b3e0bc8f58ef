"""Stochastic log-determinant and derivative estimators.

All estimators consume an SPD operator through matrix-vector products only
and share one :class:`~logdetgp.operators.ProbeSet` between the log
determinant and its derivatives. Per-probe results are kept so that sample
variances are available a posteriori.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .exceptions import ContractViolation, NumericalError
from .lanczos import LanczosDecomposition, lanczos_decompose
from .operators import ProbeSet, cg_solve, extremal_eigs

__all__ = [
    "LanczosDecomposition",
    "lanczos_decompose",
    "ChebyshevPlan",
    "LogDetEstimate",
    "GradientEstimate",
    "HessianEstimate",
    "ReferenceCorrection",
    "VarianceReport",
    "chebyshev_plan",
    "chebyshev_bounds",
    "chebyshev_logdet_grad",
    "slq_logdet",
    "lanczos_logdet_grad",
    "hutchinson_trace",
    "second_derivatives",
    "scaled_eig_logdet",
    "reference_correction",
    "variance_diagnostic",
]


def _stats(samples):
    samples = np.asarray(samples, dtype=float)
    n_z = samples.shape[0]
    if n_z < 2:
        var = np.full(samples.shape[1:], np.nan)
    else:
        var = samples.var(axis=0, ddof=1)
    return var, np.sqrt(var / n_z)


@dataclass(frozen=True)
class LogDetEstimate:
    """Stochastic estimate ``value = offset + mean(per_probe)``."""

    value: float
    per_probe: np.ndarray
    sample_variance: float
    stderr: float
    mvm_count: int
    offset: float = 0.0

    @classmethod
    def from_samples(cls, per_probe, mvm_count, offset=0.0):
        per_probe = np.asarray(per_probe, dtype=float)
        var, se = _stats(per_probe)
        return cls(
            value=float(offset + per_probe.mean()),
            per_probe=per_probe,
            sample_variance=float(var),
            stderr=float(se),
            mvm_count=int(mvm_count),
            offset=float(offset),
        )

    @classmethod
    def exact(cls, value):
        return cls(float(value), np.array([]), 0.0, 0.0, 0, float(value))

    @property
    def samples(self):
        """Per-probe estimates of the full log determinant."""
        return self.per_probe + self.offset


@dataclass(frozen=True)
class GradientEstimate:
    partials: np.ndarray
    per_probe: np.ndarray
    stderr: np.ndarray = field(default=None)

    @classmethod
    def from_samples(cls, per_probe):
        per_probe = np.atleast_2d(np.asarray(per_probe, dtype=float))
        _, se = _stats(per_probe)
        return cls(per_probe.mean(axis=0), per_probe, se)


# --------------------------------------------------------------------------
# Chebyshev


@dataclass(frozen=True)
class ChebyshevPlan:
    """Interpolant of ``log(1 + alpha x)`` on ``[-1, 1]`` plus the affine map.

    The operator is written ``K = beta (I + alpha B)`` so that ``B`` has its
    spectrum in ``[-1, 1]`` when ``[lambda_min, lambda_max]`` encloses it.
    """

    degree: int
    coefficients: np.ndarray
    scale_beta: float
    scale_alpha: float
    nodes: np.ndarray
    lambda_min: float
    lambda_max: float

    def evaluate(self, x):
        """Polynomial value at scalar points ``x`` in ``[-1, 1]``."""
        x = np.asarray(x, dtype=float)
        return np.polynomial.chebyshev.chebval(x, self.coefficients)


def chebyshev_plan(lambda_min, lambda_max, m):
    """Degree-``m`` Chebyshev interpolant for ``log`` on ``[lambda_min, lambda_max]``."""
    if not (0 < lambda_min < lambda_max) or not np.isfinite(lambda_max):
        raise ContractViolation(
            f"need 0 < lambda_min < lambda_max, got [{lambda_min}, {lambda_max}]"
        )
    if m < 1:
        raise ContractViolation("Chebyshev degree must be >= 1")
    beta = 0.5 * (lambda_max + lambda_min)
    alpha = (lambda_max - lambda_min) / (lambda_max + lambda_min)
    k = np.arange(m + 1)
    angles = np.pi * (k + 0.5) / (m + 1)
    nodes = np.cos(angles)
    fx = np.log1p(alpha * nodes)
    T = np.cos(np.outer(k, angles))  # T[j, k] = T_j(x_k)
    c = (2.0 / (m + 1)) * (T @ fx)
    c[0] *= 0.5
    return ChebyshevPlan(int(m), c, float(beta), float(alpha), nodes, float(lambda_min), float(lambda_max))


def chebyshev_bounds(op, probes, lambda_min, steps=20, inflation=1.01):
    """Spectral interval for the Chebyshev plan.

    The lower end is supplied by the caller (the noise variance for
    ``K + sigma^2 I``); the upper end is the largest Ritz value of a short
    Lanczos run, inflated because it underestimates ``lambda_max``.
    """
    _, top = extremal_eigs(op, probes, min(steps, op.dim) if op.dim >= 2 else 2)
    return float(lambda_min), float(inflation * top)


def chebyshev_logdet_grad(op, dops, probes, plan):
    """Chebyshev estimates of ``log|K|`` and ``d log|K| / d theta_i``.

    Runs the coupled recurrences for ``w_j = T_j(B) z`` and their parameter
    derivatives on all probes at once. The plan's ``alpha`` and ``beta`` are
    held fixed, so the gradient is the exact derivative of the polynomial
    estimator. Costs ``m`` products with ``op`` plus ``2 m`` products (``m``
    with ``op``, ``m`` with ``dop``) per derivative, per probe.
    """
    dops = list(dops or [])
    Z = probes.matrix if isinstance(probes, ProbeSet) else np.asarray(probes, float).T
    n, n_z = Z.shape
    if n != op.dim:
        raise ContractViolation("probe length does not match the operator")
    a, b, c, m = plan.scale_alpha, plan.scale_beta, plan.coefficients, plan.degree
    inv_ab = 1.0 / (a * b)

    def B(V):
        return (op.matvec(V) / b - V) / a

    w_prev, w = Z, B(Z)
    acc = c[0] * np.einsum("ij,ij->j", Z, Z) + c[1] * np.einsum("ij,ij->j", Z, w)
    p = len(dops)
    # Derivative recurrence started from dw_0 = 0, applied uniformly: dw_1 = dB w_0 + B dw_0.
    dw_prev = [np.zeros_like(Z) for _ in range(p)]
    dw = [inv_ab * dops[i].matvec(Z) + B(dw_prev[i]) for i in range(p)]
    dacc = np.zeros((p, n_z))
    for i in range(p):
        dacc[i] = c[1] * np.einsum("ij,ij->j", Z, dw[i])
    for j in range(1, m):
        w_next = 2.0 * B(w) - w_prev
        for i in range(p):
            dnext = 2.0 * (inv_ab * dops[i].matvec(w) + B(dw[i])) - dw_prev[i]
            dw_prev[i], dw[i] = dw[i], dnext
            dacc[i] += c[j + 1] * np.einsum("ij,ij->j", Z, dnext)
        w_prev, w = w, w_next
        acc += c[j + 1] * np.einsum("ij,ij->j", Z, w)
        if not np.all(np.isfinite(acc)):
            raise NumericalError("non-finite Chebyshev recurrence value", step=j + 1)
    if p and not np.all(np.isfinite(dacc)):
        raise NumericalError("non-finite Chebyshev derivative recurrence", step=m)
    mvms = n_z * (m + 2 * m * p)
    logdet = LogDetEstimate.from_samples(acc, mvms, offset=n * np.log(b))
    grad = GradientEstimate.from_samples(dacc.T) if p else GradientEstimate(np.zeros(0), np.zeros((n_z, 0)), np.zeros(0))
    return logdet, grad


# --------------------------------------------------------------------------
# Lanczos


def _quadrature(dec, fn=np.log):
    theta, tau = dec.ritz()
    if fn is np.log and np.any(theta <= 0):
        raise NumericalError(
            f"nonpositive Ritz value {theta.min():.3e}; operator indefinite or badly scaled",
            step=dec.k,
        )
    return dec.start_norm**2 * float(np.sum(tau**2 * fn(theta)))


def slq_logdet(op, probes, m):
    """Stochastic Lanczos quadrature estimate of ``log|op|``.

    Per probe, ``||z||^2 e_1^T log(T) e_1`` from an ``m``-step decomposition.
    """
    if m < 1:
        raise ContractViolation("m must be >= 1")
    samples, mvms = [], 0
    for z in probes:
        dec = lanczos_decompose(op, z, m)
        mvms += dec.k
        samples.append(_quadrature(dec))
    return LogDetEstimate.from_samples(samples, mvms)


def _solve_from_decomposition(dec):
    """``||z|| Q T^{-1} e_1``, the Lanczos approximation of ``K^{-1} z``."""
    e1 = np.zeros(dec.k)
    e1[0] = dec.start_norm
    if dec.k == 1:
        if dec.alpha[0] == 0:
            raise NumericalError("singular tridiagonal matrix", step=1)
        y = e1 / dec.alpha[0]
    else:
        ab = np.zeros((3, dec.k))
        ab[0, 1:] = dec.beta
        ab[1] = dec.alpha
        ab[2, :-1] = dec.beta
        try:
            y = scipy.linalg.solve_banded((1, 1), ab, e1)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular tridiagonal matrix", step=dec.k) from exc
    return dec.Q @ y


def lanczos_logdet_grad(op, dops, probes, m, return_solves=False):
    """Lanczos estimates of ``log|K|`` and its derivatives from shared MVMs.

    The gradient uses ``g = ||z|| Q T^{-1} e_1 ~ K^{-1} z`` from the same
    decomposition, so the only extra products are one per derivative
    operator per probe: ``d_i = g^T (dK_i z)``.
    """
    dops = list(dops or [])
    samples, dsamples, solves, mvms = [], [], [], 0
    for z in probes:
        dec = lanczos_decompose(op, z, m)
        mvms += dec.k
        samples.append(_quadrature(dec))
        g = _solve_from_decomposition(dec)
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite Lanczos solve", step=dec.k)
        dsamples.append([g @ d.matvec(z) for d in dops])
        if return_solves:
            solves.append(g)
    logdet = LogDetEstimate.from_samples(samples, mvms)
    grad = GradientEstimate.from_samples(np.array(dsamples).reshape(len(samples), len(dops)))
    if return_solves:
        return logdet, grad, np.array(solves)
    return logdet, grad


def hutchinson_trace(op, probes):
    """``tr(op)`` estimated as the mean of ``z^T op z``."""
    Z = probes.matrix
    vals = np.einsum("ij,ij->j", Z, op.matvec(Z))
    return LogDetEstimate.from_samples(vals, probes.n_z)


# --------------------------------------------------------------------------
# second derivatives


@dataclass(frozen=True)
class HessianEstimate:
    """Second-derivative estimates of ``log|K|`` and of ``(y - mu)^T alpha``.

    ``logdet`` and ``quad`` are sample means over probe pairs and are not
    symmetric sample by sample; ``*_sym`` are their symmetrized versions.
    """

    logdet: np.ndarray
    quad: np.ndarray
    logdet_stderr: np.ndarray
    quad_stderr: np.ndarray
    logdet_samples: np.ndarray = field(repr=False)
    quad_samples: np.ndarray = field(repr=False)

    @property
    def logdet_sym(self):
        return 0.5 * (self.logdet + self.logdet.T)

    @property
    def quad_sym(self):
        return 0.5 * (self.quad + self.quad.T)


def _block_solve(op, B, tol):
    X, _, _ = cg_solve(op, B, tol=tol)
    return X


def second_derivatives(op, dops, d2ops, alpha_vec, probes, solve=None, tol=1e-10):
    """Unbiased Hessian estimators using only products with kernel derivatives.

    Probes are consumed as independent pairs ``(z, w)``; ``g = K^{-1} z`` and
    ``h = K^{-1} w`` come from ``solve`` (block CG by default). Per pair::

        H_logdet[i, j] = g^T d2K_ij z - (g^T dK_i w)(h^T dK_j z)
        H_quad[i, j]   = 2 (z^T dK_i a)(g^T dK_j a) - a^T d2K_ij a
    """
    Zs, Ws = probes.pairs() if isinstance(probes, ProbeSet) else _pairs_array(probes)
    Z, W = Zs.T, Ws.T
    solve = solve or (lambda B: _block_solve(op, B, tol))
    G, Hs = solve(Z), solve(W)
    a = np.asarray(alpha_vec, dtype=float)
    p = len(dops)
    n_pairs = Z.shape[1]
    dKW = [d.matvec(W) for d in dops]
    dKZ = [d.matvec(Z) for d in dops]
    dKa = [d.matvec(a) for d in dops]
    za = np.stack([Z.T @ v for v in dKa])  # (p, pairs): z^T dK_i a
    ga = np.stack([G.T @ v for v in dKa])
    gdw = np.stack([np.einsum("ij,ij->j", G, v) for v in dKW])  # g^T dK_i w
    hdz = np.stack([np.einsum("ij,ij->j", Hs, v) for v in dKZ])  # h^T dK_j z
    L = np.empty((n_pairs, p, p))
    Qd = np.empty((n_pairs, p, p))
    for i in range(p):
        for j in range(p):
            d2 = d2ops[i][j]
            gd2z = np.einsum("ij,ij->j", G, d2.matvec(Z))
            L[:, i, j] = gd2z - gdw[i] * hdz[j]
            Qd[:, i, j] = 2.0 * za[i] * ga[j] - a @ d2.matvec(a)
    _, lse = _stats(L)
    _, qse = _stats(Qd)
    return HessianEstimate(L.mean(axis=0), Qd.mean(axis=0), lse, qse, L, Qd)


def _pairs_array(vectors):
    V = np.asarray(vectors, dtype=float)
    if V.shape[0] % 2:
        raise ContractViolation(f"pairing needs an even probe count, got {V.shape[0]}")
    return V[0::2], V[1::2]


# --------------------------------------------------------------------------
# baselines and diagnostics


def scaled_eig_logdet(grid_eigs, n, sigma2):
    """``sum_{i<=n} log((n/m) lambda_i + sigma^2)`` over the ``n`` largest grid eigenvalues."""
    lam = np.sort(np.asarray(grid_eigs, dtype=float))[::-1]
    m = lam.size
    top = np.zeros(n)
    k = min(n, m)
    top[:k] = lam[:k]
    vals = (n / m) * top + sigma2
    if np.any(vals <= 0):
        raise NumericalError("nonpositive scaled eigenvalue")
    return float(np.sum(np.log(vals)))


@dataclass(frozen=True)
class ReferenceCorrection:
    """First-order change in the log likelihood when ``K`` is replaced by ``K + E``."""

    delta_loglik: float
    delta_grad: np.ndarray
    loglik_stderr: float
    grad_stderr: np.ndarray

    def __iter__(self):
        return iter((self.delta_loglik, self.delta_grad))


def reference_correction(op, E_op, dE_ops, probes, alpha_vec, dops, solve=None, tol=1e-10):
    """Stochastic first-order correction toward a reference kernel ``K + E``.

    With ``g = K^{-1} z`` and ``h = K^{-1} w`` for probe pairs ``(z, w)``::

        dL   = -1/2 [E(g^T E z) - a^T E a]
        dG_i = -1/2 [E(g^T dE_i z - (g^T dK_i w)(h^T E z))
                     - a^T dE_i a + 2 E((a^T dK_i g)(z^T E a))]

    The last term is the derivative of ``a^T E a`` through ``a = K^{-1} y``.
    """
    dops = list(dops)
    dE_ops = list(dE_ops or [])
    Zs, Ws = probes.pairs() if isinstance(probes, ProbeSet) else _pairs_array(probes)
    Z, W = Zs.T, Ws.T
    solve = solve or (lambda B: _block_solve(op, B, tol))
    G, H = solve(Z), solve(W)
    a = np.asarray(alpha_vec, dtype=float)
    Ea = E_op.matvec(a)
    EZ = E_op.matvec(Z)
    EW = E_op.matvec(W)
    # Both halves of every pair estimate the trace term.
    tr_samples = np.concatenate([np.einsum("ij,ij->j", G, EZ), np.einsum("ij,ij->j", H, EW)])
    aEa = a @ Ea
    ll = -0.5 * (tr_samples - aEa)
    _, ll_se = _stats(ll)
    hEz = np.einsum("ij,ij->j", H, EZ)
    zEa = Z.T @ Ea
    gs = []
    for dK, dE in zip(dops, dE_ops):
        gdEz = np.einsum("ij,ij->j", G, dE.matvec(Z))
        gdKw = np.einsum("ij,ij->j", G, dK.matvec(W))
        adKg = dK.matvec(a) @ G
        gs.append(-0.5 * (gdEz - gdKw * hEz - a @ dE.matvec(a) + 2.0 * adKg * zEa))
    if gs:
        gsamples = np.stack(gs, axis=1)
        _, gse = _stats(gsamples)
        dgrad = gsamples.mean(axis=0)
    else:
        dgrad, gse = np.zeros(0), np.zeros(0)
    return ReferenceCorrection(float(ll.mean()), dgrad, float(ll_se), gse)


@dataclass(frozen=True)
class VarianceReport:
    sample_variance: float
    stderr: Optional[float]
    n_z: int
    offdiag_sq: Optional[float] = None
    predicted_variance: Optional[float] = None
    ratio: Optional[float] = None


def variance_diagnostic(estimate, exact_offdiag_sq=None):
    """Compare the probe sample variance with the Rademacher prediction.

    For Rademacher probes ``Var[z^T A z] = 2 sum_{i != j} A_ij^2``; when the
    dense sum of squared off-diagonal entries of ``log K`` is supplied, the
    report includes ``sample_variance / (2 * offdiag_sq)``.
    """
    n_z = len(estimate.per_probe)
    var = float(estimate.sample_variance) if n_z >= 2 else float("nan")
    stderr = float(np.sqrt(var / n_z)) if n_z >= 2 else None
    if exact_offdiag_sq is None:
        return VarianceReport(var, stderr, n_z)
    predicted = 2.0 * float(exact_offdiag_sq)
    ratio = var / predicted if predicted > 0 else (0.0 if var == 0 else float("inf"))
    return VarianceReport(var, stderr, n_z, float(exact_offdiag_sq), predicted, ratio)
