import numpy as np
import pytest


def random_spd(n, rng, cond=None):
    """SPD matrix; geometric spectrum from 1 to ``cond`` when given, else M^T M + I."""
    if cond is None:
        M = rng.standard_normal((n, n))
        return M.T @ M + np.eye(n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = (Q * np.geomspace(1.0, cond, n)) @ Q.T
    return 0.5 * (A + A.T)


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out.append((f(x + e) - f(x - e)) / (2 * h))
    return np.array(out)


def logm_spd(A):
    w, V = np.linalg.eigh(A)
    return (V * np.log(w)) @ V.T


def max_rel(a, b):
    """Largest absolute deviation relative to the largest reference entry."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def report_criterion(label, ok, detail):
    """Record (and print) one acceptance verdict line."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: _criterion_key(s)):
            terminalreporter.write_line(line)


def _criterion_key(line):
    label = line.split("criterion ", 1)[1].split(":", 1)[0]
    digits = "".join(ch for ch in label if ch.isdigit())
    return (int(digits or 0), label)
