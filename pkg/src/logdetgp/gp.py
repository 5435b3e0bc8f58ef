"""Gaussian-process marginal likelihood, hyperparameter fitting and prediction.

The log determinant of ``K~ = K + sigma^2 I`` and its derivatives come from a
pluggable backend:

``exact``       dense Cholesky (oracle; ``n`` below the dense cap)
``lanczos``     stochastic Lanczos quadrature
``chebyshev``   stochastic Chebyshev expansion
``surrogate``   cubic RBF surrogate over log-hyperparameters
``scaled-eig``  rescaled eigenvalues of the grid kernel (SKI only)

The data-fit term ``(y - mu)^T alpha`` always uses ``alpha = K~^{-1}(y - mu)``
from conjugate gradients, except on the exact backend which reuses its
Cholesky factor.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.optimize

from .estimators import (
    GradientEstimate,
    LogDetEstimate,
    chebyshev_bounds,
    chebyshev_logdet_grad,
    chebyshev_plan,
    lanczos_logdet_grad,
    scaled_eig_logdet,
    slq_logdet,
)
from .exceptions import ConfigurationError, ContractViolation, DenseSizeError, NumericalError
from .kernels import (
    DENSE_CAP,
    DataSet,
    Hyperparameters,
    build_dense_kernel,
    build_interp_weights,
    build_ski_operator,
    derivative_operators,
    grid_kernel_matrix,
    kernel_matrix,
    ski_diag_correction,
)
from .operators import CountingOperator, DenseOperator, ScaledIdentity, cg_solve, rademacher_probes
from .surrogate import SurrogateModel, build_surrogate, choose_design_points

logger = logging.getLogger(__name__)

BACKENDS = ("exact", "lanczos", "chebyshev", "surrogate", "scaled-eig")
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Budget:
    """Stochastic budget: ``m`` Lanczos steps or Chebyshev degree, ``n_z`` probes."""

    m: int = 25
    n_z: int = 5
    seed: int = 0
    cg_tol: float = 1e-8
    eig_steps: int = 20

    @classmethod
    def default(cls, backend, **overrides):
        base = {"chebyshev": cls(m=100, n_z=5)}.get(backend, cls())
        return replace(base, **overrides)


@dataclass(frozen=True)
class LikelihoodEvaluation:
    neg_log_lik: float
    grad: np.ndarray
    alpha_vec: np.ndarray
    logdet: LogDetEstimate
    logdet_grad: np.ndarray
    datafit: float
    datafit_grad: np.ndarray
    backend: str
    mvm_count: int = 0
    cg_iterations: int = 0


@dataclass
class FitResult:
    theta_star: Hyperparameters
    trace: list
    converged: bool
    total_mvms: int
    evaluation: Optional[LikelihoodEvaluation] = None
    message: str = ""
    n_evaluations: int = 0


@dataclass
class _Problem:
    """Operators for one ``theta``; ``grid`` switches between dense and SKI."""

    op: object
    dops: list
    W: object = None


def _build_problem(data, spec, theta, grid, diag_correct, cap=DENSE_CAP):
    if grid is None:
        op = build_dense_kernel(spec, theta, data.X, cap=cap)
        return _Problem(op, derivative_operators(spec, theta, data.X, cap=cap))
    W = build_interp_weights(data.X, grid)
    op = build_ski_operator(spec, theta, data.X, grid, diag_correct, W=W)
    dops = derivative_operators(spec, theta, data.X, grid, diag_correct, W=W)
    return _Problem(op, dops, W)


def _dense(op):
    return op.matrix if isinstance(op, DenseOperator) else op.to_dense()


def _exact_logdet(problem, r, cap):
    n = problem.op.dim
    if n > cap:
        raise DenseSizeError(f"exact backend needs n <= {cap}, got {n}")
    K = _dense(problem.op)
    try:
        cf = scipy.linalg.cho_factor(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Cholesky factorization failed") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    Kinv = scipy.linalg.cho_solve(cf, np.eye(n), check_finite=False)
    grads = []
    for d in problem.dops:
        if isinstance(d, ScaledIdentity):
            grads.append(d.scale * np.trace(Kinv))
        else:
            grads.append(float(np.sum(Kinv * _dense(d))))
    alpha = scipy.linalg.cho_solve(cf, r, check_finite=False)
    return LogDetEstimate.exact(logdet), np.array(grads), alpha


def _scaled_eig(data, spec, theta, grid, cap):
    if grid is None:
        raise ConfigurationError("scaled-eig backend needs an inducing grid")
    if grid.m > cap:
        raise DenseSizeError(f"grid eigendecomposition needs m <= {cap}, got {grid.m}")
    n, m = data.n, grid.m
    lam, V = scipy.linalg.eigh(grid_kernel_matrix(spec, theta, grid))
    order = np.argsort(lam)[::-1][: min(n, m)]
    lam, V = np.clip(lam[order], 0.0, None), V[:, order]
    s2 = theta.noise**2
    padded = np.zeros(n)
    padded[: lam.size] = lam
    value = scaled_eig_logdet(padded, n, s2) if m >= n else scaled_eig_logdet(lam, n, s2)
    denom = (n / m) * lam + s2
    grads = []
    for i in range(theta.n_params - 1):
        dK = grid_kernel_matrix(spec, theta, grid, (i,))
        dlam = np.einsum("ij,ij->j", V, dK @ V)
        grads.append(float(np.sum((n / m) * dlam / denom)))
    full = np.full(n, s2)
    full[: lam.size] = denom
    grads.append(float(np.sum(2.0 * s2 / full)))
    return LogDetEstimate.exact(value), np.array(grads)


def _surrogate_logdet(model, theta):
    if model is None:
        raise ConfigurationError("surrogate backend needs a surrogate model")
    vec = theta.to_vector()
    idx = list(model.metadata.get("param_indices", range(len(vec))))
    base = np.asarray(model.metadata.get("base_theta", vec), dtype=float)
    if len(base) != len(vec) or len(idx) != model.dim:
        raise ConfigurationError("surrogate model does not match the hyperparameter layout")
    fixed = [i for i in range(len(vec)) if i not in idx]
    if fixed and not np.allclose(vec[fixed], base[fixed], rtol=0, atol=1e-12):
        raise ConfigurationError(
            f"surrogate was built with parameters {fixed} fixed; they cannot vary"
        )
    value, g = model.evaluate(vec[idx])
    grads = np.full(len(vec), np.nan)
    grads[idx] = g
    return LogDetEstimate.exact(value), grads


def log_marginal_likelihood(
    data,
    spec,
    theta,
    backend="lanczos",
    budget=None,
    grid=None,
    diag_correct=False,
    surrogate=None,
    cap=DENSE_CAP,
):
    """Negative log marginal likelihood and its gradient in log parameters.

    ``neg_log_lik = 1/2 [(y - mu)^T alpha + log|K~| + n log 2 pi]`` and
    ``grad_i = 1/2 [tr(K~^{-1} dK~_i) - alpha^T dK~_i alpha]``.
    Probes are regenerated from ``budget.seed`` on every call, so for a fixed
    seed the stochastic objective is a deterministic function of ``theta``.
    """
    if backend not in BACKENDS:
        raise ConfigurationError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    budget = budget or Budget.default(backend)
    if backend == "surrogate" and surrogate is None:
        raise ConfigurationError("surrogate backend needs a surrogate model")
    if backend == "scaled-eig" and grid is None:
        raise ConfigurationError("scaled-eig backend needs an inducing grid")
    n = data.n
    r = data.y - data.mean
    problem = _build_problem(data, spec, theta, grid, diag_correct, cap)
    counter = CountingOperator(problem.op)
    cg_iters = 0

    if backend == "exact":
        logdet, ld_grad, alpha = _exact_logdet(problem, r, cap)
    else:
        alpha, cg_iters, _ = cg_solve(counter, r, tol=budget.cg_tol)
        if backend == "lanczos":
            probes = rademacher_probes(n, budget.n_z, budget.seed)
            logdet, g = lanczos_logdet_grad(counter, problem.dops, probes, budget.m)
            ld_grad = g.partials
        elif backend == "chebyshev":
            probes = rademacher_probes(n, budget.n_z, budget.seed)
            low = theta.noise**2
            if getattr(problem.op, "diag", None) is not None and problem.op.diag.size:
                low += min(0.0, float(problem.op.diag.min()))
            lo, hi = chebyshev_bounds(counter, probes, low, steps=budget.eig_steps)
            if lo <= 0:
                raise NumericalError("diagonal correction leaves no positive spectral lower bound")
            plan = chebyshev_plan(lo, max(hi, lo * (1 + 1e-8)), budget.m)
            logdet, g = chebyshev_logdet_grad(counter, problem.dops, probes, plan)
            ld_grad = g.partials
        elif backend == "scaled-eig":
            logdet, ld_grad = _scaled_eig(data, spec, theta, grid, cap)
        else:
            logdet, ld_grad = _surrogate_logdet(surrogate, theta)
    datafit = float(r @ alpha)
    fit_grad = np.array([alpha @ d.matvec(alpha) for d in problem.dops])
    nll = 0.5 * (datafit + logdet.value + n * LOG_2PI)
    grad = 0.5 * (ld_grad - fit_grad)
    if not np.isfinite(nll):
        raise NumericalError("non-finite marginal likelihood")
    return LikelihoodEvaluation(
        neg_log_lik=float(nll),
        grad=grad,
        alpha_vec=alpha,
        logdet=logdet,
        logdet_grad=np.asarray(ld_grad, dtype=float),
        datafit=datafit,
        datafit_grad=fit_grad,
        backend=backend,
        mvm_count=counter.count,
        cg_iterations=int(np.max(cg_iters)) if backend != "exact" else 0,
    )


def default_bounds(data, theta0):
    """Box on log parameters scaled by the spread of inputs and targets."""
    sx = np.std(data.X, axis=0)
    sx = np.where(sx > 0, sx, 1.0)
    sy = float(np.std(data.y)) or 1.0
    p = len(theta0.log_lengthscales)
    ls_scale = sx if p == data.d and p > 1 else np.array([float(np.mean(sx))])
    bounds = [(float(np.log(1e-3 * s)), float(np.log(1e2 * s))) for s in ls_scale]
    bounds.append((float(np.log(1e-3 * sy)), float(np.log(1e2 * sy))))
    bounds.append((float(np.log(1e-4 * sy)), float(np.log(1e1 * sy))))
    return bounds


def fit(
    data,
    spec,
    theta0,
    backend="lanczos",
    budget=None,
    max_iters=100,
    bounds=None,
    grid=None,
    diag_correct=False,
    surrogate=None,
    fixed=(),
    cap=DENSE_CAP,
):
    """Minimize the negative log marginal likelihood with bounded L-BFGS.

    The probe seed stays fixed for the whole run (common random numbers).
    Parameters listed in ``fixed`` (indices into the log-parameter vector)
    are pinned to their starting values.
    """
    budget = budget or Budget.default(backend)
    x0 = theta0.to_vector()
    p = len(theta0.log_lengthscales)
    bounds = list(bounds) if bounds is not None else default_bounds(data, theta0)
    if len(bounds) != len(x0):
        raise ConfigurationError(f"expected {len(x0)} bounds, got {len(bounds)}")
    fixed = set(fixed)
    if backend == "surrogate" and surrogate is not None:
        idx = set(surrogate.metadata.get("param_indices", range(len(x0))))
        fixed |= set(range(len(x0))) - idx
    bounds = [(x0[i], x0[i]) if i in fixed else tuple(b) for i, b in enumerate(bounds)]
    x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])

    cache = {}
    total = {"mvms": 0, "evals": 0}

    def evaluate(x):
        key = np.asarray(x, dtype=float).tobytes()
        if key not in cache:
            theta = Hyperparameters.from_vector(x, p)
            ev = log_marginal_likelihood(
                data, spec, theta, backend, budget, grid, diag_correct, surrogate, cap
            )
            total["mvms"] += ev.mvm_count
            total["evals"] += 1
            cache.clear()
            cache[key] = ev
        return cache[key]

    def objective(x):
        try:
            ev = evaluate(x)
        except NumericalError as exc:
            logger.debug("objective failed at %s: %s", x, exc)
            return np.inf, np.zeros_like(x)
        g = np.where(np.isnan(ev.grad), 0.0, ev.grad)
        g[list(fixed)] = 0.0
        return ev.neg_log_lik, g

    first = evaluate(x0)
    if not np.isfinite(first.neg_log_lik):
        raise NumericalError("objective is not finite at theta0")

    def grad_norm(ev):
        g = np.where(np.isnan(ev.grad), 0.0, ev.grad)
        g[list(fixed)] = 0.0
        return float(np.linalg.norm(g))

    trace = [(0, first.neg_log_lik, grad_norm(first))]
    if max_iters <= 0:
        return FitResult(theta0, trace, False, total["mvms"], first, "max_iters=0", total["evals"])

    last = {"x": x0, "ev": first}

    def callback(xk):
        ev = evaluate(xk)
        last["x"], last["ev"] = np.array(xk), ev
        trace.append((len(trace), ev.neg_log_lik, grad_norm(ev)))

    res = scipy.optimize.minimize(
        objective,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        callback=callback,
        options={"maxiter": int(max_iters), "maxcor": 10, "ftol": 1e-9, "gtol": 1e-5},
    )
    x_star = np.asarray(res.x, dtype=float)
    ev = evaluate(x_star)
    if ev.neg_log_lik > last["ev"].neg_log_lik:
        x_star, ev = last["x"], last["ev"]
    return FitResult(
        theta_star=Hyperparameters.from_vector(x_star, p),
        trace=trace,
        converged=bool(res.success),
        total_mvms=total["mvms"],
        evaluation=ev,
        message=str(res.message),
        n_evaluations=total["evals"],
    )


def predict(data, spec, theta, X_star, grid=None, diag_correct=False, cg_tol=1e-10, block=64, cap=DENSE_CAP):
    """Posterior mean and variance at ``X_star``.

    Dense mode uses exact cross-covariances; SKI mode uses the interpolated
    cross-covariance ``W_* K_UU W^T``. Variances come from blocked CG solves
    and are clamped at zero (with a warning) when roundoff makes them negative.
    """
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    if X_star.shape[1] != data.d:
        raise ContractViolation(f"test inputs have {X_star.shape[1]} columns, data have {data.d}")
    if not np.all(np.isfinite(X_star)):
        raise ContractViolation("test inputs contain NaN or Inf")
    problem = _build_problem(data, spec, theta, grid, diag_correct, cap)
    op = problem.op
    r = data.y - data.mean
    alpha, _, res = cg_solve(op, r, tol=cg_tol)
    if res > max(1e3 * cg_tol, 1e-6) * max(np.linalg.norm(r), 1e-300):
        raise NumericalError("conjugate gradients did not converge for the predictive mean")
    ns = X_star.shape[0]
    s2 = theta.signal**2
    if grid is None:
        cross = lambda rows: kernel_matrix(spec, theta, data.X, X_star[rows])  # noqa: E731
        prior = np.full(ns, s2)
    else:
        Ws = build_interp_weights(X_star, grid)
        Wst = Ws.T.tocsr()
        inner = op.inner
        cross = lambda rows: problem.W @ inner.matvec(Wst[:, rows].toarray())  # noqa: E731
        if diag_correct:
            prior = np.full(ns, s2)
        else:
            prior = s2 - ski_diag_correction(Ws, grid, spec, theta)
    mean = np.empty(ns)
    var = np.empty(ns)
    for start in range(0, ns, block):
        rows = np.arange(start, min(start + block, ns))
        Kxs = cross(rows)
        mean[rows] = data.mean + Kxs.T @ alpha
        sol, _, _ = cg_solve(op, Kxs, tol=cg_tol)
        var[rows] = prior[rows] - np.einsum("ij,ij->j", Kxs, sol)
    neg = var < 0
    if np.any(var < -1e-8):
        warnings.warn(f"{int(np.sum(var < -1e-8))} predictive variances below -1e-8 clamped to 0")
    var[neg] = 0.0
    return mean, var


def sample_prior(spec, theta, X, seed, mean=0.0, cap=DENSE_CAP):
    """Draw ``y = mu + L eps + sigma eps'`` with ``L L^T = K_XX``.

    Jitter starting at ``1e-10 s_f^2`` is added, escalating by 100x up to
    three times, when the factorization fails.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n > cap:
        raise DenseSizeError(f"prior sampling needs n <= {cap}, got {n}")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(n)
    eps_noise = rng.standard_normal(n)
    s2 = theta.signal**2
    f = np.zeros(n)
    if s2 > 0:
        K = kernel_matrix(spec, theta, X)
        jitters = [0.0] + [1e-10 * s2 * 100**k for k in range(3)]
        for jit in jitters:
            try:
                L = scipy.linalg.cholesky(K + jit * np.eye(n), lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                continue
        else:
            raise NumericalError("prior covariance factorization failed after 3 jitter escalations")
        f = L @ eps
    return mean + f + theta.noise * eps_noise


def build_logdet_surrogate(
    data,
    spec,
    base_theta,
    param_indices,
    bounds,
    count=50,
    seed=0,
    budget=None,
    grid=None,
    diag_correct=False,
    corners="auto",
    cap=DENSE_CAP,
):
    """Surrogate of ``log|K~|`` over a box of selected log parameters.

    Design values come from stochastic Lanczos quadrature with one frozen
    probe set (default ``m=50``, ``n_z=10``).
    """
    budget = budget or Budget(m=50, n_z=10, seed=seed)
    idx = list(param_indices)
    base = base_theta.to_vector()
    p = len(base_theta.log_lengthscales)
    points = choose_design_points(bounds, count, seed, corners=corners)
    probes = rademacher_probes(data.n, budget.n_z, budget.seed)
    values = []
    for pt in points:
        vec = base.copy()
        vec[idx] = pt
        theta = Hyperparameters.from_vector(vec, p)
        problem = _build_problem(data, spec, theta, grid, diag_correct, cap)
        values.append(slq_logdet(problem.op, probes, budget.m).value)
    meta = {
        "kernel": spec.name,
        "isotropic": spec.isotropic,
        "param_indices": idx,
        "param_names": [base_theta.names()[i] for i in idx],
        "base_theta": base.tolist(),
        "bounds": np.asarray(bounds, dtype=float).tolist(),
        "builder": {"method": "lanczos", "m": budget.m, "n_z": budget.n_z, "seed": budget.seed,
                    "count": int(count), "design_seed": int(seed)},
        "n": data.n,
    }
    return build_surrogate(points, values, meta)
