import numpy as np
import pytest

from skc import kernels as K
from skc.data import Dataset
from skc.gp import GPModel

ACCEPTANCE_LINES = []


def record_acceptance(number, ok, detail):
    line = f"acceptance {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def random_base(rng, ndim, kinds=K.BASE_KINDS):
    kind = kinds[rng.integers(len(kinds))]
    d = int(rng.integers(ndim))
    if kind == K.SE:
        return K.se(d, var=np.exp(rng.uniform(-1, 1)), len=np.exp(rng.uniform(-0.5, 1)))
    if kind == K.LIN:
        return K.lin(d, var=np.exp(rng.uniform(-1.5, 0.5)), off=rng.uniform(-1, 1))
    return K.per(d, var=np.exp(rng.uniform(-1, 1)), len=np.exp(rng.uniform(-0.3, 1)), per=np.exp(rng.uniform(-0.5, 1)))


def random_kernel(rng, ndim=2, depth=3, kinds=K.BASE_KINDS):
    """Random expression built by ``depth`` sum/product extensions of a base kernel."""
    k = random_base(rng, ndim, kinds)
    for _ in range(depth):
        b = random_base(rng, ndim, kinds)
        k = K.Sum((k, b)) if rng.random() < 0.5 else K.Product((k, b))
    return k


def random_model(rng, ndim=2, depth=3, noise=None, kinds=K.BASE_KINDS):
    if noise is None:
        noise = float(np.exp(rng.uniform(np.log(0.05), np.log(0.5))))
    return GPModel(random_kernel(rng, ndim, depth, kinds), noise)


def random_data(rng, n, ndim=2):
    X = rng.normal(size=(n, ndim))
    y = np.sin(X[:, 0]) + 0.3 * X[:, -1] + 0.3 * rng.normal(size=n)
    return Dataset(X, y)


def finite_diff(f, theta, h=1e-5):
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


def grad_close(g, fd, rtol=1e-4, atol=1e-6):
    """Per-coordinate relative check; the absolute floor scales with the largest entry
    so coordinates that cancel to nearly zero are judged against round-off."""
    floor = atol * max(1.0, float(np.max(np.abs(fd))))
    return bool(np.all(np.abs(g - fd) <= rtol * np.abs(fd) + floor))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
