import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def random_pd(rng, n, cond=100.0, complex_=True):
    X = rng.normal(size=(n, n))
    if complex_:
        X = X + 1j * rng.normal(size=(n, n))
    Q, _ = np.linalg.qr(X)
    w = np.geomspace(1.0, cond, n) * rng.uniform(0.5, 2.0)
    rng.shuffle(w)
    A = (Q * w) @ Q.conj().T
    return 0.5 * (A + A.conj().T)


def random_hermitian(rng, n):
    X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (X + X.conj().T)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
