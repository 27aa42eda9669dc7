"""Dense Hermitian linear algebra used by the weighted spectral problems.

All functions take plain numpy arrays.  Positive-definite square roots and
their parameter derivatives are computed through the spectral calculus; the
Sylvester equation ``S X + X T = Y`` has a closed-form solver and an
independent quadrature solver built on matrix exponentials.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg

HERMITIAN_RTOL = 1e-12


class NotHermitianError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    pass


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def hermitian_defect(H: np.ndarray) -> float:
    H = np.asarray(H)
    scale = max(np.linalg.norm(H), 1.0)
    return float(np.linalg.norm(H - H.conj().T) / scale)


def check_hermitian(H: np.ndarray, rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise NotHermitianError(f"expected a square matrix, got shape {H.shape}")
    defect = hermitian_defect(H)
    if defect > rtol:
        raise NotHermitianError(f"matrix is not Hermitian (relative defect {defect:.2e})")
    return H


def hermitize(H: np.ndarray) -> np.ndarray:
    return 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))


def fix_phases(V: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Rotate each column so its first non-negligible component is real positive."""
    V = np.array(V, dtype=complex, copy=True)
    for c in range(V.shape[1]):
        col = V[:, c]
        big = np.flatnonzero(np.abs(col) > tol * max(np.max(np.abs(col)), 1e-300))
        if big.size:
            z = col[big[0]]
            V[:, c] = col * (abs(z) / z)
    return V


def eigh(H: np.ndarray, rtol: float = HERMITIAN_RTOL) -> EigenDecomposition:
    """Full eigendecomposition with ascending eigenvalues and fixed column phases."""
    H = check_hermitian(H, rtol)
    w, V = np.linalg.eigh(hermitize(H))
    return EigenDecomposition(w, fix_phases(V))


def _spectral_blocks(A: np.ndarray):
    A = hermitize(np.asarray(A))
    w, V = np.linalg.eigh(A)
    if np.any(w <= 0):
        raise NotPositiveDefiniteError(f"smallest eigenvalue {w.min():.3e} is not positive")
    return w, V


def _apply(w, V, fw):
    # batched V diag(f(w)) V^*
    return (V * fw[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))


def sqrt_pd(A: np.ndarray) -> np.ndarray:
    """Positive square root; ``A`` may be a stack ``(..., r, r)`` of blocks."""
    w, V = _spectral_blocks(A)
    return _apply(w, V, np.sqrt(w))


def inv_sqrt_pd(A: np.ndarray) -> np.ndarray:
    w, V = _spectral_blocks(A)
    return _apply(w, V, 1.0 / np.sqrt(w))


def lambda_bounds(A: np.ndarray) -> tuple[float, float]:
    w = np.linalg.eigvalsh(hermitize(np.asarray(A)))
    return float(w.min()), float(w.max())


def sylvester_solve(S: np.ndarray, T: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Solve ``S X + X T = Y`` for positive-definite S, T in their eigenbases.

    Broadcasts over leading axes.
    """
    s, V = np.linalg.eigh(hermitize(np.asarray(S)))
    t, W = np.linalg.eigh(hermitize(np.asarray(T)))
    denom = s[..., :, None] + t[..., None, :]
    if np.any(denom <= 0):
        raise NotPositiveDefiniteError("sigma_i + tau_j <= 0; S and T must be positive definite")
    Vh = np.conj(np.swapaxes(V, -1, -2))
    Wh = np.conj(np.swapaxes(W, -1, -2))
    Yp = Vh @ Y @ W
    return V @ (Yp / denom) @ Wh


def sylvester_quadrature(S: np.ndarray, T: np.ndarray, Y: np.ndarray,
                         nodes: int = 96) -> np.ndarray:
    """Evaluate ``X = int_0^inf exp(-sS) Y exp(-sT) ds`` numerically.

    Uses the trapezoid rule in ``u = log(c s)`` with ``c = lmin(S) + lmin(T)``,
    which is exponentially convergent for the double-exponentially decaying
    integrand.  The part of the integral left of the first node is summed as
    a geometric tail with ``exp(-sS) ~ Id``.
    """
    if nodes < 2:
        raise ValueError("nodes must be >= 2")
    S = hermitize(np.asarray(S, dtype=complex))
    T = hermitize(np.asarray(T, dtype=complex))
    Y = np.asarray(Y, dtype=complex)
    lo_s, hi_s = lambda_bounds(S)
    lo_t, hi_t = lambda_bounds(T)
    if lo_s <= 0 or lo_t <= 0:
        raise NotPositiveDefiniteError("S and T must be positive definite")
    c = lo_s + lo_t
    kappa = (hi_s + hi_t) / c
    u_lo, u_hi = -np.log(kappa) - 14.0, 3.6
    h = (u_hi - u_lo) / (nodes - 1)
    X = Y * (h * np.exp(u_lo) / np.expm1(h)) / c
    for u in u_lo + h * np.arange(nodes):
        s = np.exp(u) / c
        X = X + (h * s) * (scipy.linalg.expm(-s * S) @ Y @ scipy.linalg.expm(-s * T))
    return X


def sqrt_derivative(A: np.ndarray, Adot: np.ndarray) -> np.ndarray:
    """t-derivative of ``sqrt(A_t)`` given ``dA/dt``; solves ``S Sdot + Sdot S = Adot``."""
    S = sqrt_pd(A)
    return sylvester_solve(S, S, np.asarray(Adot))


def inv_sqrt_derivative(A: np.ndarray, Adot: np.ndarray) -> np.ndarray:
    """t-derivative of ``A_t^{-1/2}``, equal to ``-Q Sdot Q``."""
    Q = inv_sqrt_pd(A)
    return -Q @ sqrt_derivative(A, Adot) @ Q


def opnorm(X: np.ndarray) -> np.ndarray:
    """Spectral norm, batched over leading axes."""
    return np.linalg.norm(X, ord=2, axis=(-2, -1))
