import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_hermitian, random_pd
from specflow.matfun import (NotHermitianError, NotPositiveDefiniteError, eigh,
                             inv_sqrt_derivative, inv_sqrt_pd, lambda_bounds, opnorm,
                             sqrt_derivative, sqrt_pd, sylvester_quadrature, sylvester_solve)


def test_eigh_small_examples():
    w, V = eigh(np.eye(3))
    assert np.allclose(w, 1.0)
    assert np.allclose(V.conj().T @ V, np.eye(3), atol=1e-12)
    w, _ = eigh(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(w, [1.0, 3.0], atol=1e-14)
    w, _ = eigh(np.array([[0, -1j], [1j, 0]]))
    assert np.allclose(w, [-1.0, 1.0], atol=1e-14)


def test_eigh_rejects_non_hermitian():
    with pytest.raises(NotHermitianError):
        eigh(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_eigh_contract_random(rng):
    for n in (1, 5, 40):
        H = random_hermitian(rng, n)
        w, V = eigh(H)
        assert np.all(np.diff(w) >= 0)
        assert np.linalg.norm(V.conj().T @ V - np.eye(n)) <= 1e-12 * n
        assert np.linalg.norm(H @ V - V * w) <= 1e-12 * np.linalg.norm(H) * n
        # phase convention: first non-negligible entry real positive
        for c in range(n):
            z = V[np.flatnonzero(np.abs(V[:, c]) > 1e-10)[0], c]
            assert abs(z.imag) < 1e-12 and z.real > 0


def test_eigh_deterministic(rng):
    H = random_hermitian(rng, 12)
    a = eigh(H)
    b = eigh(H.copy())
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.eigenvectors, b.eigenvectors)


def test_sqrt_examples():
    assert np.allclose(sqrt_pd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    r3 = math.sqrt(3)
    expect = np.array([[r3 + 1, r3 - 1], [r3 - 1, r3 + 1]]) / 2
    assert np.allclose(sqrt_pd(np.array([[2.0, 1.0], [1.0, 2.0]])), expect, atol=1e-14)
    assert np.allclose(sqrt_pd(np.eye(4)), np.eye(4), atol=1e-15)
    assert np.allclose(inv_sqrt_pd(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]), atol=1e-15)


def test_sqrt_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        sqrt_pd(np.diag([1.0, -1.0]))
    with pytest.raises(NotPositiveDefiniteError):
        inv_sqrt_pd(np.diag([1.0, 0.0]))


@pytest.mark.parametrize("cond", [1.0, 10.0, 1e3, 1e6])
def test_sqrt_identities(rng, cond):
    for n in (2, 7, 16):
        A = random_pd(rng, n, cond)
        S, Q = sqrt_pd(A), inv_sqrt_pd(A)
        nA = np.linalg.norm(A, 2)
        assert np.linalg.norm(S @ S - A, 2) <= 1e-12 * nA * 4
        lo, hi = lambda_bounds(A)
        assert np.linalg.norm(Q @ A @ Q - np.eye(n), 2) <= 1e-12 * max(1.0, cond) * 4
        slack = 1 + 1e-14 * max(1.0, cond)
        assert opnorm(S) <= math.sqrt(hi) * slack
        assert opnorm(Q) <= slack / math.sqrt(lo)
        assert np.linalg.norm(Q @ S - np.eye(n), 2) <= 1e-12 * max(1.0, cond)


def test_batched_sqrt(rng):
    blocks = np.stack([random_pd(rng, 3, 5.0) for _ in range(6)])
    S = sqrt_pd(blocks)
    for k in range(6):
        assert np.allclose(S[k], sqrt_pd(blocks[k]), atol=1e-14)


def test_sylvester_examples():
    Y = np.arange(9.0).reshape(3, 3)
    assert np.allclose(sylvester_solve(np.eye(3), np.eye(3), Y), Y / 2, atol=1e-15)
    X = sylvester_solve(np.diag([1.0, 2.0]), np.diag([3.0, 4.0]), np.ones((2, 2)))
    assert np.allclose(X, [[1 / 4, 1 / 5], [1 / 5, 1 / 6]], atol=1e-15)


def test_sylvester_hermitian_output(rng):
    S = random_pd(rng, 6, 20.0)
    Y = random_hermitian(rng, 6)
    X = sylvester_solve(S, S, Y)
    assert np.linalg.norm(X - X.conj().T) <= 1e-13 * np.linalg.norm(X)


def test_sylvester_residual_and_bound(rng):
    for _ in range(20):
        n = int(rng.integers(1, 17))
        S, T = random_pd(rng, n, 1e3), random_pd(rng, n, 1e3)
        Y = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        X = sylvester_solve(S, T, Y)
        assert np.linalg.norm(S @ X + X @ T - Y) <= 1e-10 * np.linalg.norm(Y)
        m = lambda_bounds(S)[0] + lambda_bounds(T)[0]
        assert opnorm(X) <= opnorm(Y) / m * (1 + 1e-12)


def test_quadrature_scalar_case():
    X = sylvester_quadrature(np.eye(3), np.eye(3), np.eye(3), nodes=64)
    assert np.allclose(X, np.eye(3) / 2, atol=1e-10)


def test_quadrature_rejects_one_node():
    with pytest.raises(ValueError):
        sylvester_quadrature(np.eye(2), np.eye(2), np.eye(2), nodes=1)


def test_quadrature_matches_closed_form(rng):
    for _ in range(10):
        n = int(rng.integers(2, 9))
        S, T = random_pd(rng, n, 50.0), random_pd(rng, n, 50.0)
        Y = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        X0 = sylvester_solve(S, T, Y)
        X1 = sylvester_quadrature(S, T, Y, nodes=64)
        assert np.linalg.norm(X1 - X0) <= 1e-8 * np.linalg.norm(X0)


def test_quadrature_ill_scaled():
    S = np.diag([1.0, 100.0])
    Y = np.ones((2, 2))
    X0 = sylvester_solve(S, S, Y)
    X1 = sylvester_quadrature(S, S, Y)
    assert np.linalg.norm(X1 - X0) <= 1e-6 * np.linalg.norm(X0)


def test_sqrt_derivative_examples():
    assert np.allclose(sqrt_derivative(np.eye(2), 2 * np.eye(2)), np.eye(2), atol=1e-15)
    assert np.allclose(inv_sqrt_derivative(np.eye(2), 2 * np.eye(2)), -np.eye(2), atol=1e-15)
    # A(t) = (1+t)^2 diag(1,4): S(t) = (1+t) diag(1,2), so Sdot(0) = diag(1,2)
    D = np.diag([1.0, 4.0])
    assert np.allclose(sqrt_derivative(D, 2 * D), np.diag([1.0, 2.0]), atol=1e-14)
    assert np.allclose(inv_sqrt_derivative(D, 2 * D), -np.diag([1.0, 0.5]), atol=1e-14)
    h = 1e-5
    fd = (sqrt_pd((1 + h) ** 2 * D) - sqrt_pd((1 - h) ** 2 * D)) / (2 * h)
    assert np.allclose(fd, np.diag([1.0, 2.0]), atol=1e-9)


def _pd_path(rng, n):
    A0 = random_pd(rng, n, 10.0)
    B = random_hermitian(rng, n)
    B *= 0.2 * lambda_bounds(A0)[0] / opnorm(B)
    return (lambda t: A0 + t * B + t * t * B @ B / 10), (lambda t: B + t * B @ B / 5)


def test_derivatives_against_central_differences(rng):
    for n in (2, 5, 9):
        A, Adot = _pd_path(rng, n)
        t0 = 0.3
        for fun, der in ((sqrt_pd, sqrt_derivative), (inv_sqrt_pd, inv_sqrt_derivative)):
            exact = der(A(t0), Adot(t0))
            errs = []
            for h in (1e-2, 5e-3):
                fd = (fun(A(t0 + h)) - fun(A(t0 - h))) / (2 * h)
                errs.append(np.linalg.norm(fd - exact))
            assert 3.5 <= errs[0] / errs[1] <= 4.5
            fd = (fun(A(t0 + 1e-4)) - fun(A(t0 - 1e-4))) / 2e-4
            assert np.linalg.norm(fd - exact) <= 1e-7 * max(1.0, np.linalg.norm(exact))
            assert np.linalg.norm(exact - exact.conj().T) <= 1e-12 * np.linalg.norm(exact)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1), st.floats(1.0, 1e4))
def test_sqrt_derivative_bound(n, seed, cond):
    rng = np.random.default_rng(seed)
    A = random_pd(rng, n, cond)
    Adot = random_hermitian(rng, n)
    Sdot = sqrt_derivative(A, Adot)
    bound = opnorm(Adot) / (2 * math.sqrt(lambda_bounds(A)[0]))
    assert opnorm(Sdot) <= bound * (1 + 1e-10)
