"""Cubic radial basis function surrogate with a linear tail.

The model ``s(x) = sum_i lambda_i ||x - x_i||^3 + c_0 + c^T x`` interpolates
precomputed values (log determinants) at design points in log-hyperparameter
space, with the coefficients constrained by ``sum_i lambda_i q(x_i) = 0`` for
every linear polynomial ``q``.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist, pdist
from scipy.stats import qmc

from .exceptions import ContractViolation, GeometryError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class SurrogateModel:
    design_points: np.ndarray
    values: np.ndarray
    lam: np.ndarray
    poly: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.design_points.shape[1]

    def evaluate(self, theta):
        return surrogate_eval(self, theta)

    def __call__(self, theta):
        return surrogate_eval(self, theta)[0]

    def to_dict(self):
        return {
            "format": "cubic-rbf-linear-tail",
            "version": FORMAT_VERSION,
            "design_points": self.design_points.tolist(),
            "values": self.values.tolist(),
            "lambda": self.lam.tolist(),
            "poly": self.poly.tolist(),
            "metadata": self.metadata,
        }

    def to_json(self, path=None, indent=2):
        text = json.dumps(self.to_dict(), indent=indent, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "cubic-rbf-linear-tail":
            raise ContractViolation(f"not a surrogate model document: {doc.get('format')!r}")
        return cls(
            design_points=np.asarray(doc["design_points"], dtype=float),
            values=np.asarray(doc["values"], dtype=float),
            lam=np.asarray(doc["lambda"], dtype=float),
            poly=np.asarray(doc["poly"], dtype=float),
            metadata=dict(doc.get("metadata", {})),
        )

    @classmethod
    def from_json(cls, text_or_path):
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


def choose_design_points(bounds, count, seed=0, corners="auto"):
    """Latin hypercube design inside a box.

    Each dimension's ``count`` equal strata receive exactly one point.
    ``corners`` controls whether box corners are part of the design: with
    ``"auto"`` they are included only in one dimension, where snapping the two
    extreme points to the bounds keeps the stratification; ``True`` replaces
    ``2**d`` points by the corners (the remaining points stay a Latin
    hypercube of their own) and ``False`` never adds them.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if bounds.shape[1] != 2:
        raise ContractViolation("bounds must be a list of (low, high) pairs")
    lo, hi = bounds[:, 0], bounds[:, 1]
    if not (np.all(np.isfinite(bounds)) and np.all(hi > lo)):
        raise ContractViolation(f"infeasible bounds {bounds.tolist()}")
    d = bounds.shape[0]
    if count < d + 2:
        raise ContractViolation(f"need at least {d + 2} design points in {d} dimensions")
    rng = np.random.default_rng(seed)
    use_corners = (d == 1) if corners == "auto" else bool(corners)
    n_corner = 2**d if use_corners and d > 1 else 0
    if n_corner and count - n_corner < d + 2:
        n_corner = 0
    unit = qmc.LatinHypercube(d=d, seed=rng).random(count - n_corner)
    if use_corners and d == 1:
        unit[np.argmin(unit[:, 0]), 0] = 0.0
        unit[np.argmax(unit[:, 0]), 0] = 1.0
    if n_corner:
        grid = np.array(np.meshgrid(*[[0.0, 1.0]] * d, indexing="ij")).reshape(d, -1).T
        unit = np.vstack([grid, unit])
    return lo + unit * (hi - lo)


def build_surrogate(points, values, metadata=None):
    """Solve the interpolation saddle system ``[[Phi, P], [P^T, 0]]``."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    v = np.asarray(values, dtype=float).ravel()
    n, d = X.shape
    if v.shape[0] != n:
        raise ContractViolation(f"{n} points but {v.shape[0]} values")
    if not np.all(np.isfinite(v)) or not np.all(np.isfinite(X)):
        raise ContractViolation("points and values must be finite")
    if n > 1 and pdist(X).min() == 0.0:
        raise GeometryError("design points are not pairwise distinct")
    P = np.hstack([np.ones((n, 1)), X])
    if n < d + 1 or np.linalg.matrix_rank(P) < d + 1:
        raise GeometryError("design points do not determine a linear polynomial (not unisolvent)")
    Phi = cdist(X, X) ** 3
    A = np.zeros((n + d + 1, n + d + 1))
    A[:n, :n] = Phi
    A[:n, n:] = P
    A[n:, :n] = P.T
    rhs = np.concatenate([v, np.zeros(d + 1)])
    try:
        sol = scipy.linalg.solve(A, rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise GeometryError("singular interpolation system") from exc
    if not np.all(np.isfinite(sol)):
        raise GeometryError("singular interpolation system")
    return SurrogateModel(X.copy(), v.copy(), sol[:n], sol[n:], dict(metadata or {}))


def surrogate_eval(model, theta):
    """Value and gradient of the surrogate at ``theta``.

    The cubic kernel has gradient ``3 r (x - x_i)``, which is continuous and
    zero at the design points.
    """
    x = np.asarray(theta, dtype=float).ravel()
    if x.shape[0] != model.dim:
        raise ContractViolation(f"surrogate is {model.dim}-dimensional, got a point of length {x.shape[0]}")
    diff = x[None, :] - model.design_points
    r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    value = model.lam @ r**3 + model.poly[0] + model.poly[1:] @ x
    grad = 3.0 * (model.lam * r) @ diff + model.poly[1:]
    return float(value), grad
