"""Command-line harness for log-determinant benchmarks and GP jobs.

Every subcommand reads a JSON config (``--config``), lets flags override it,
writes CSV results plus a JSON sidecar to ``--out`` and exits with

0 success, 1 unexpected failure, 2 configuration error, 3 data error,
4 numerical failure.

Failures print one line, ``error: <category>: <message>``, on stderr.
"""

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from importlib import metadata as importlib_metadata
from pathlib import Path

import jsonschema
import numpy as np
import scipy
import scipy.linalg
from threadpoolctl import threadpool_limits

from .estimators import (
    chebyshev_bounds,
    chebyshev_logdet_grad,
    chebyshev_plan,
    slq_logdet,
)
from .exceptions import (
    ConfigurationError,
    ContractViolation,
    DenseSizeError,
    GeometryError,
    InvalidProbeError,
    NumericalError,
    OutOfGridError,
)
from .gp import (
    BACKENDS,
    Budget,
    build_logdet_surrogate,
    fit,
    log_marginal_likelihood,
    predict,
    sample_prior,
)
from .kernels import DataSet, Hyperparameters, InducingGrid, KernelSpec
from .operators import CountingOperator, DenseOperator, extremal_eigs, rademacher_probes

logger = logging.getLogger("logdetgp")

TASKS = ("logdet", "fit", "predict", "compare-estimators", "surrogate-build", "recover")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3, 4

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 0}
_POSINT = {"type": "integer", "minimum": 1}
_THETA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["lengthscale", "signal", "noise"],
    "properties": {
        "lengthscale": {"oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]},
        "signal": {"type": "number", "minimum": 0},
        "noise": _POS,
    },
}
_BOUNDS = {
    "type": "array",
    "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
    "minItems": 1,
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kernel"],
    "properties": {
        "task": {"enum": list(TASKS)},
        "seed": _INT,
        "backend": {"enum": list(BACKENDS)},
        "threads": _POSINT,
        "output": {"type": "string"},
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["rbf", "matern12", "matern32", "matern52"]},
                "isotropic": {"type": "boolean"},
                "lengthscale": {"oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]},
                "signal": _POS,
                "noise": _POS,
            },
        },
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "mean": {"oneOf": [_NUM, {"const": "sample"}]},
                "synthetic": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["n", "d"],
                    "properties": {
                        "n": _POSINT,
                        "d": _POSINT,
                        "distribution": {"enum": ["normal", "uniform"]},
                        "low": _NUM,
                        "high": _NUM,
                        "scale": _POS,
                        "theta": _THETA,
                        "seed": _INT,
                    },
                },
                "matrix": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "diagonal": {"type": "array", "items": _POS, "minItems": 1},
                        "random_spd": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["n", "condition"],
                            "properties": {"n": _POSINT, "condition": {"type": "number", "minimum": 1}, "seed": _INT},
                        },
                    },
                },
            },
        },
        "budget": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"m": _POSINT, "n_z": _POSINT, "seed": _INT, "cg_tol": _POS},
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["sizes"],
            "properties": {
                "sizes": {"type": "array", "items": {"type": "integer", "minimum": 6}, "minItems": 1},
                "diag_correct": {"type": "boolean"},
            },
        },
        "fit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"max_iters": _INT, "bounds": _BOUNDS},
        },
        "predict": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "test_path": {"type": "string"},
                "test_grid": {"type": "integer", "minimum": 2},
                "fit_first": {"type": "boolean"},
            },
        },
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "parameter": {"type": "string"},
                "offsets": {"type": "array", "items": _NUM, "minItems": 1},
                "n_seeds": {"type": "integer", "minimum": 2},
                "methods": {"type": "array", "items": {"enum": ["exact", "lanczos", "chebyshev", "scaled-eig"]}},
            },
        },
        "surrogate": {
            "type": "object",
            "additionalProperties": False,
            "required": ["parameters", "bounds"],
            "properties": {
                "parameters": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "bounds": _BOUNDS,
                "count": _POSINT,
                "level_grid": {"type": "integer", "minimum": 2},
                "corners": {"enum": ["auto", True, False]},
            },
        },
        "recover": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_seeds": _POSINT, "exact_check": {"type": "boolean"}},
        },
    },
}


class _DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config and I/O helpers


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc.msg} at line {exc.lineno}") from exc


def validate_config(config):
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"{where}: {exc.message}") from exc


def read_dataset_csv(path):
    """Header row, then columns ``x1..xd`` and ``y``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise _DataError(f"cannot read dataset {path}: {exc.strerror}") from exc
    if len(rows) < 2:
        raise _DataError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    try:
        values = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise _DataError(f"{path}: non-numeric entry ({exc})") from exc
    if values.ndim != 2 or values.shape[1] != len(header):
        raise _DataError(f"{path}: rows do not match the {len(header)}-column header")
    if not np.all(np.isfinite(values)):
        raise _DataError(f"{path}: NaN or Inf entries")
    return values, header


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _versions():
    out = {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}
    try:
        out["logdetgp"] = importlib_metadata.version("artifact")
    except importlib_metadata.PackageNotFoundError:
        out["logdetgp"] = "unknown"
    return out


def write_sidecar(path, config, task, outputs, results=None, timing=None):
    doc = {
        "task": task,
        "config": config,
        "outputs": outputs,
        "versions": _versions(),
        "results": results or {},
        "timing": timing or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# building blocks from the config


def _spec(config):
    k = config["kernel"]
    ls = k.get("lengthscale", 1.0)
    return KernelSpec(k["family"], isotropic=k.get("isotropic", np.ndim(ls) == 0))


def _theta(block, default=None):
    block = block or default or {}
    return Hyperparameters.from_natural(
        block.get("lengthscale", 1.0), block.get("signal", 1.0), block.get("noise", 0.1)
    )


def _budget(config, backend):
    b = dict(config.get("budget", {}))
    b.setdefault("seed", config.get("seed", 0))
    return Budget.default(backend, **b)


def _inputs(syn, rng):
    n, d = syn["n"], syn["d"]
    if syn.get("distribution", "uniform") == "normal":
        return syn.get("scale", 1.0) * rng.standard_normal((n, d))
    lo, hi = syn.get("low", 0.0), syn.get("high", 1.0)
    if not hi > lo:
        raise ConfigurationError("dataset/synthetic: high must exceed low")
    return rng.uniform(lo, hi, size=(n, d))


def synthetic_dataset(config, spec, seed_offset=0):
    syn = config["dataset"]["synthetic"]
    seed = syn.get("seed", config.get("seed", 0)) + seed_offset
    rng = np.random.default_rng(seed)
    X = _inputs(syn, rng)
    truth = _theta(syn.get("theta"), config["kernel"])
    y = sample_prior(spec, truth, X, seed + 1)
    return DataSet(X, y), truth


def load_dataset(config, spec):
    ds = config.get("dataset")
    if not ds:
        raise ConfigurationError("dataset: required for this task")
    if "path" in ds:
        values, _ = read_dataset_csv(ds["path"])
        if values.shape[1] < 2:
            raise _DataError("dataset needs at least one input column and a target column")
        data = DataSet(values[:, :-1], values[:, -1])
    elif "synthetic" in ds:
        data, _ = synthetic_dataset(config, spec)
    else:
        raise ConfigurationError("dataset: give either 'path' or 'synthetic'")
    mean = ds.get("mean", 0.0)
    return data.with_sample_mean() if mean == "sample" else DataSet(data.X, data.y, float(mean))


def _grid(config, data):
    g = config.get("grid")
    if not g:
        return None, False
    sizes = g["sizes"]
    if len(sizes) == 1 and data.d > 1:
        sizes = sizes * data.d
    if len(sizes) != data.d:
        raise ConfigurationError(f"grid/sizes: expected {data.d} entries, got {len(sizes)}")
    return InducingGrid.from_data(data.X, sizes), bool(g.get("diag_correct", False))


def _matrix_operator(config):
    mat = config["dataset"]["matrix"]
    if "diagonal" in mat:
        return DenseOperator(np.diag(np.asarray(mat["diagonal"], dtype=float)))
    if "random_spd" in mat:
        r = mat["random_spd"]
        return DenseOperator(random_spd(r["n"], r["condition"], r.get("seed", config.get("seed", 0))))
    raise ConfigurationError("dataset/matrix: give 'diagonal' or 'random_spd'")


def random_spd(n, condition, seed):
    """Random orthogonal basis with a geometric spectrum from 1 to ``condition``."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.geomspace(1.0, float(condition), n)
    A = (Q * eig) @ Q.T
    return 0.5 * (A + A.T)


def _param_index(theta, name):
    names = theta.names()
    aliases = {"lengthscale": "log_lengthscale", "signal": "log_signal", "noise": "log_noise"}
    name = aliases.get(name, name)
    if name not in names:
        raise ConfigurationError(f"unknown parameter {name!r}; choose from {names}")
    return names.index(name)


# ---------------------------------------------------------------------------
# tasks


def _estimate_logdet(op, backend, budget, noise_floor=None):
    counter = CountingOperator(op)
    n = op.dim
    if backend == "exact":
        K = op.to_dense()
        try:
            L = scipy.linalg.cholesky(K, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("Cholesky factorization failed") from exc
        return 2.0 * float(np.sum(np.log(np.diag(L)))), 0.0, 0
    probes = rademacher_probes(n, budget.n_z, budget.seed)
    if backend == "lanczos":
        est = slq_logdet(counter, probes, budget.m)
    elif backend == "chebyshev":
        steps = min(budget.eig_steps, n)
        # Without a noise floor, deflate the smallest Ritz value (an upper bound on lambda_min).
        lo = noise_floor if noise_floor is not None else 0.5 * extremal_eigs(counter, probes, max(steps, 2))[0]
        _, hi = chebyshev_bounds(counter, probes, lo, steps=steps)
        plan = chebyshev_plan(lo, max(hi, lo * (1 + 1e-8)), budget.m)
        est, _ = chebyshev_logdet_grad(counter, [], probes, plan)
    else:
        raise ConfigurationError(f"backend {backend!r} cannot estimate a bare log determinant")
    stderr = float(est.stderr) if np.isfinite(est.stderr) else float("nan")
    return est.value, stderr, counter.count


def task_logdet(config, out):
    backend = config.get("backend", "lanczos")
    budget = _budget(config, backend)
    ds = config.get("dataset", {})
    if "matrix" in ds:
        op = _matrix_operator(config)
        source = "matrix"
        value, stderr, mvms = _estimate_logdet(op, backend, budget)
    else:
        spec = _spec(config)
        data = load_dataset(config, spec)
        theta = _theta(config["kernel"])
        grid, dc = _grid(config, data)
        ev = log_marginal_likelihood(data, spec, theta, backend, budget, grid, dc)
        value, stderr, mvms = ev.logdet.value, ev.logdet.stderr, ev.logdet.mvm_count
        source = "kernel"
        op = None
    n = op.dim if op is not None else data.n
    header = ["task", "source", "backend", "n", "m", "n_z", "seed", "value", "stderr", "mvm_count"]
    row = ["logdet", source, backend, n, budget.m, budget.n_z, budget.seed, value, stderr, mvms]
    write_csv(out / "logdet.csv", header, [row])
    return ["logdet.csv"], {"value": value, "stderr": stderr, "mvm_count": mvms}


def _fit_from_config(config, data, spec, backend, budget, grid, dc, theta0):
    fcfg = config.get("fit", {})
    return fit(data, spec, theta0, backend, budget, fcfg.get("max_iters", 100), fcfg.get("bounds"),
               grid, dc)


def task_fit(config, out):
    backend = config.get("backend", "lanczos")
    if backend == "surrogate":
        raise ConfigurationError("use surrogate-build first; fit with the surrogate backend is library-only")
    spec = _spec(config)
    data = load_dataset(config, spec)
    grid, dc = _grid(config, data)
    budget = _budget(config, backend)
    theta0 = _theta(config["kernel"])
    res = _fit_from_config(config, data, spec, backend, budget, grid, dc, theta0)
    write_csv(out / "fit_trace.csv", ["iteration", "neg_log_lik", "grad_norm"], res.trace)
    rows = [[nm, lv, float(np.exp(lv))] for nm, lv in zip(res.theta_star.names(), res.theta_star.to_vector())]
    write_csv(out / "fit_theta.csv", ["parameter", "log_value", "value"], rows)
    results = {
        "theta": dict(zip(res.theta_star.names(), res.theta_star.to_vector().tolist())),
        "neg_log_lik": res.evaluation.neg_log_lik,
        "converged": res.converged,
        "total_mvms": res.total_mvms,
        "message": res.message,
    }
    return ["fit_trace.csv", "fit_theta.csv"], results


def task_predict(config, out):
    spec = _spec(config)
    data = load_dataset(config, spec)
    grid, dc = _grid(config, data)
    pcfg = config.get("predict", {})
    theta = _theta(config["kernel"])
    if pcfg.get("fit_first", False):
        backend = config.get("backend", "lanczos")
        theta = _fit_from_config(config, data, spec, backend, _budget(config, backend), grid, dc, theta).theta_star
    if "test_path" in pcfg:
        Xs, _ = read_dataset_csv(pcfg["test_path"])
        if Xs.shape[1] == data.d + 1:
            Xs = Xs[:, :-1]
        if Xs.shape[1] != data.d:
            raise _DataError(f"test inputs have {Xs.shape[1]} columns, training data have {data.d}")
    else:
        k = pcfg.get("test_grid", 50)
        lo, hi = data.X.min(axis=0), data.X.max(axis=0)
        axes = [np.linspace(a, b, k) for a, b in zip(lo, hi)]
        Xs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, data.d)
    mean, var = predict(data, spec, theta, Xs, grid, dc)
    header = [f"x{j + 1}" for j in range(data.d)] + ["mean", "variance"]
    write_csv(out / "predictions.csv", header, np.column_stack([Xs, mean, var]).tolist())
    return ["predictions.csv"], {"n_test": int(Xs.shape[0]),
                                 "theta": dict(zip(theta.names(), theta.to_vector().tolist()))}


def task_compare(config, out):
    spec = _spec(config)
    data = load_dataset(config, spec)
    grid, dc = _grid(config, data)
    theta = _theta(config["kernel"])
    ccfg = config.get("compare", {})
    idx = _param_index(theta, ccfg.get("parameter", "log_lengthscale"))
    offsets = ccfg.get("offsets", np.linspace(-1.0, 1.0, 11).tolist())
    n_seeds = ccfg.get("n_seeds", 10)
    methods = ccfg.get("methods") or (["exact", "lanczos", "chebyshev"] + (["scaled-eig"] if grid else []))
    base_seed = config.get("budget", {}).get("seed", config.get("seed", 0))
    rows = []
    for off in offsets:
        vec = theta.to_vector()
        vec[idx] += off
        th = Hyperparameters.from_vector(vec, len(theta.log_lengthscales))
        for method in methods:
            if method in ("exact", "scaled-eig"):
                g = grid if method == "scaled-eig" else None
                ev = log_marginal_likelihood(data, spec, th, method, _budget(config, method), g, dc)
                rows.append([off, vec[idx], method, ev.logdet.value, 0.0, 1])
                continue
            vals = []
            for s in range(n_seeds):
                bud = _budget(config, method)
                bud = Budget(bud.m, bud.n_z, base_seed + s, bud.cg_tol, bud.eig_steps)
                ev = log_marginal_likelihood(data, spec, th, method, bud, grid, dc)
                vals.append(ev.logdet.value)
            rows.append([off, vec[idx], method, float(np.mean(vals)), float(np.std(vals, ddof=1)), n_seeds])
    header = ["offset", "parameter_value", "method", "logdet", "std", "n_runs"]
    write_csv(out / "compare.csv", header, rows)
    return ["compare.csv"], {"parameter": theta.names()[idx], "methods": methods}


def task_surrogate(config, out):
    spec = _spec(config)
    data = load_dataset(config, spec)
    grid, dc = _grid(config, data)
    theta = _theta(config["kernel"])
    scfg = config["surrogate"]
    idx = [_param_index(theta, p) for p in scfg["parameters"]]
    if len(scfg["bounds"]) != len(idx):
        raise ConfigurationError("surrogate/bounds: one (low, high) pair per parameter")
    seed = config.get("seed", 0)
    budget = Budget(**{"m": 50, "n_z": 10, "seed": seed, **config.get("budget", {})})
    model = build_logdet_surrogate(data, spec, theta, idx, scfg["bounds"], scfg.get("count", 50), seed,
                                   budget, grid, dc, scfg.get("corners", "auto"))
    model.to_json(out / "surrogate.json")
    names = [theta.names()[i] for i in idx]
    write_csv(out / "design.csv", names + ["logdet"],
              np.column_stack([model.design_points, model.values]).tolist())
    k = scfg.get("level_grid", 20)
    axes = [np.linspace(lo, hi, k) for lo, hi in scfg["bounds"]]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(idx))
    vals = [model(p) for p in pts]
    write_csv(out / "level_curves.csv", names + ["surrogate_logdet"], np.column_stack([pts, vals]).tolist())
    return ["surrogate.json", "design.csv", "level_curves.csv"], {"design_points": len(model.values)}


def task_recover(config, out):
    spec = _spec(config)
    if "synthetic" not in config.get("dataset", {}):
        raise ConfigurationError("recover: dataset/synthetic with a ground-truth theta is required")
    backend = config.get("backend", "lanczos")
    rcfg = config.get("recover", {})
    rows, timing = [], {}
    for s in range(rcfg.get("n_seeds", 1)):
        data, truth = synthetic_dataset(config, spec, seed_offset=s)
        grid, dc = _grid(config, data)
        budget = _budget(config, backend)
        budget = Budget(budget.m, budget.n_z, budget.seed + s, budget.cg_tol, budget.eig_steps)
        theta0 = _theta(config["kernel"])
        t0 = time.monotonic()
        res = _fit_from_config(config, data, spec, backend, budget, grid, dc, theta0)
        timing[f"seed_{s}_seconds"] = time.monotonic() - t0
        exact_nll = ""
        if rcfg.get("exact_check", False):
            exact_nll = log_marginal_likelihood(data, spec, res.theta_star, "exact").neg_log_lik
        est = np.exp(res.theta_star.to_vector())
        tru = np.exp(truth.to_vector())
        for name, t, e in zip(truth.names(), tru, est):
            rows.append([s, name.replace("log_", ""), t, e, abs(e / t - 1.0),
                         res.evaluation.neg_log_lik, exact_nll])
    header = ["replicate", "parameter", "truth", "recovered", "relative_error", "neg_log_lik", "exact_neg_log_lik"]
    write_csv(out / "recover.csv", header, rows)
    return ["recover.csv"], {"replicates": rcfg.get("n_seeds", 1)}, timing


TASK_FUNCS = {
    "logdet": task_logdet,
    "fit": task_fit,
    "predict": task_predict,
    "compare-estimators": task_compare,
    "surrogate-build": task_surrogate,
    "recover": task_recover,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="logdetgp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--backend", choices=BACKENDS, metavar="NAME")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--threads", type=int, metavar="N")
    return parser


def run(task, config, out_dir=None, threads=None):
    """Validate ``config`` and run ``task``; returns the list of written files."""
    validate_config(config)
    if config.get("task", task) != task:
        raise ConfigurationError(f"config is for task {config['task']!r}, not {task!r}")
    config = {**config, "task": task}
    out = Path(out_dir or config.get("output") or ".")
    out.mkdir(parents=True, exist_ok=True)
    threads = threads or config.get("threads")
    t0 = time.monotonic()
    with threadpool_limits(limits=threads):
        result = TASK_FUNCS[task](config, out)
    outputs, results = result[0], result[1]
    timing = result[2] if len(result) > 2 else {}
    timing["wall_seconds"] = time.monotonic() - t0
    sidecar = f"{task}.json"
    write_sidecar(out / sidecar, config, task, outputs, results, timing)
    return outputs + [sidecar]


def _category(exc):
    if isinstance(exc, (ConfigurationError, jsonschema.ValidationError)):
        return "config", EXIT_CONFIG
    if isinstance(exc, (_DataError, OutOfGridError, DenseSizeError, GeometryError)):
        return "data", EXIT_DATA
    if isinstance(exc, (NumericalError, InvalidProbeError, np.linalg.LinAlgError)):
        return "numerical", EXIT_NUMERICAL
    if isinstance(exc, ContractViolation):
        return "data", EXIT_DATA
    return "internal", EXIT_OTHER


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = os.environ.get("LOGDETGP_LOG", "WARNING").upper()
    logging.basicConfig(level=logging.DEBUG if args.verbose else level, stream=sys.stderr)
    try:
        config = load_config(args.config)
        if not isinstance(config, dict):
            raise ConfigurationError("config must be a JSON object")
        for key in ("seed", "backend", "threads"):
            val = getattr(args, key)
            if val is not None:
                config[key] = val
        if args.seed is not None and "budget" in config:
            config["budget"] = {**config["budget"], "seed": args.seed}
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError("--threads must be positive")
        run(args.task, config, args.out, args.threads)
    except Exception as exc:  # noqa: BLE001
        category, code = _category(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {category}: {msg}", file=sys.stderr)
        logger.debug("failure", exc_info=True)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
