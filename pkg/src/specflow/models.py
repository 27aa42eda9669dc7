"""Model Dirac-type operators, weight families and their exact spectra.

Three geometries are supported, all discretised by Fourier collocation on a
uniform periodic grid:

``circle_scalar``
    ``-i d/dtheta`` on the circle of length 2pi, fiber rank 1.
``circle_system``
    ``sigma_3 (x) (-i d/dtheta)`` with alternating fiber signs, rank r >= 2.
``flat_torus``
    The Dirac operator of the flat square torus, rank 2.

Spin structures enter as offsets ``delta`` in {0, 1/2} per circle direction;
antiperiodic conditions are gauged away so the symbol becomes ``k + delta``.
Vectors are stored point-major: entry ``x * r + c`` is fiber component ``c``
at grid point ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Sequence

import numpy as np
import scipy.linalg

from . import matfun
from .expr import Node, Num, as_expression

KINDS = ("circle_scalar", "circle_system", "flat_torus")


class GeometryError(ValueError):
    pass


class EllipticityError(ValueError):
    pass


@dataclass(frozen=True)
class ModelGeometry:
    kind: str
    grid_size: int
    spin_offset: tuple[float, ...] = (0.5,)
    fiber_rank: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeometryError(f"unknown geometry kind {self.kind!r}; expected one of {KINDS}")
        M = int(self.grid_size)
        if M % 2 or M < 8:
            raise GeometryError(f"grid_size must be even and >= 8, got {self.grid_size}")
        object.__setattr__(self, "grid_size", M)
        delta = self.spin_offset
        if np.isscalar(delta):
            delta = (float(delta),) * (2 if self.kind == "flat_torus" else 1)
        delta = tuple(float(d) for d in delta)
        if len(delta) != self.n_dims:
            raise GeometryError(f"{self.kind} needs {self.n_dims} spin offset(s), got {len(delta)}")
        if any(d not in (0.0, 0.5) for d in delta):
            raise GeometryError(f"spin offsets must be 0 or 1/2, got {delta}")
        object.__setattr__(self, "spin_offset", delta)
        rank = int(self.fiber_rank)
        if self.kind == "circle_scalar" and rank != 1:
            raise GeometryError("circle_scalar has fiber rank 1")
        if self.kind == "circle_system" and rank < 2:
            raise GeometryError("circle_system needs fiber rank >= 2")
        if self.kind == "flat_torus" and rank != 2:
            raise GeometryError("flat_torus has fiber rank 2")
        object.__setattr__(self, "fiber_rank", rank)

    @classmethod
    def circle_scalar(cls, grid_size, delta=0.5):
        return cls("circle_scalar", grid_size, (delta,), 1)

    @classmethod
    def circle_system(cls, grid_size, delta=0.5, rank=2):
        return cls("circle_system", grid_size, (delta,), rank)

    @classmethod
    def flat_torus(cls, grid_size, delta=(0.5, 0.5)):
        return cls("flat_torus", grid_size, tuple(delta), 2)

    @property
    def n_dims(self) -> int:
        return 2 if self.kind == "flat_torus" else 1

    @property
    def n_points(self) -> int:
        return self.grid_size ** self.n_dims

    @property
    def dim(self) -> int:
        return self.fiber_rank * self.n_points

    @property
    def quad_weight(self) -> float:
        return (2 * np.pi / self.grid_size) ** self.n_dims

    @property
    def quadrature_weights(self) -> np.ndarray:
        return np.full(self.n_points, self.quad_weight)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """(theta1, theta2) at every grid point; theta2 is 0 on the circle."""
        theta = 2 * np.pi * np.arange(self.grid_size) / self.grid_size
        if self.n_dims == 1:
            return theta, np.zeros_like(theta)
        t1, t2 = np.meshgrid(theta, theta, indexing="ij")
        return t1.ravel(), t2.ravel()


def _dft(M):
    # unitary; row n is the mode with integer frequency fftfreq(M)*M
    return np.fft.fft(np.eye(M), axis=0, norm="ortho")


def mode_numbers(M: int) -> np.ndarray:
    return np.rint(np.fft.fftfreq(M, 1.0 / M))


@lru_cache(maxsize=16)
def _dirac_cached(geom: ModelGeometry) -> np.ndarray:
    M = geom.grid_size
    F = _dft(M)
    if geom.kind != "flat_torus":
        xi = mode_numbers(M) + geom.spin_offset[0]
        D1 = F.conj().T @ (xi[:, None] * F)
        if geom.kind == "circle_scalar":
            D = D1
        else:
            signs = np.array([(-1.0) ** c for c in range(geom.fiber_rank)])
            D = np.kron(D1, np.diag(signs))
    else:
        k = mode_numbers(M)
        xi1 = np.repeat(k + geom.spin_offset[0], M)
        xi2 = np.tile(k + geom.spin_offset[1], M)
        sigma1 = np.array([[0, 1], [1, 0]], dtype=complex)
        sigma2 = np.array([[0, -1j], [1j, 0]])
        Dmode = np.kron(np.diag(xi1), sigma1) + np.kron(np.diag(xi2), sigma2)
        G = np.kron(np.kron(F, F), np.eye(2))
        D = G.conj().T @ Dmode @ G
    D = matfun.hermitize(D)
    D.setflags(write=False)
    return D


def build_dirac(geom: ModelGeometry) -> np.ndarray:
    """Dense Hermitian matrix of the unweighted operator in real space."""
    return _dirac_cached(geom)


def _entry(value):
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ValueError("complex entries are given as [real, imag]")
        return as_expression(value[0]), as_expression(value[1])
    return as_expression(value), Num(0.0)


@dataclass(frozen=True)
class WeightFamily:
    """A t-dependent fiberwise positive-definite weight given by expressions.

    ``entries[i][j]`` is a ``(real, imag)`` pair of expression trees; the
    derivative trees are produced symbolically at construction.
    """

    entries: tuple
    lambda1: float
    lambda2: float
    interval: tuple[float, float] = (0.0, 1.0)
    name: str = ""
    derivative: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rank = len(self.entries)
        if rank == 0 or any(len(row) != rank for row in self.entries):
            raise ValueError("weight template must be a square array of expressions")
        if not 0 < self.lambda1 <= self.lambda2:
            raise ValueError(f"need 0 < lambda1 <= lambda2, got {self.lambda1}, {self.lambda2}")
        if not self.interval[0] <= self.interval[1]:
            raise ValueError(f"bad parameter interval {self.interval}")
        deriv = tuple(tuple((re.diff("t"), im.diff("t")) for re, im in row) for row in self.entries)
        object.__setattr__(self, "derivative", deriv)
        self.check_admissible()

    @classmethod
    def create(cls, template, lambda1, lambda2, interval=(0.0, 1.0), name=""):
        """Build from a scalar expression or a square array of (complex) entries."""
        if isinstance(template, (str, Node, int, float)):
            template = [[template]]
        entries = tuple(tuple(_entry(v) for v in row) for row in template)
        return cls(entries, float(lambda1), float(lambda2),
                   (float(interval[0]), float(interval[1])), name)

    @property
    def rank(self) -> int:
        return len(self.entries)

    def source(self):
        """Template as strings (scalar, or nested lists with [re, im] pairs when complex)."""
        def one(pair):
            re, im = pair
            return str(re) if isinstance(im, Num) and im.value == 0 else [str(re), str(im)]
        rows = [[one(e) for e in row] for row in self.entries]
        return rows[0][0] if self.rank == 1 else rows

    def _evaluate(self, trees, theta1, theta2, t):
        theta1 = np.asarray(theta1, dtype=float)
        env = {"theta1": theta1, "theta2": np.asarray(theta2, dtype=float), "t": float(t)}
        out = np.zeros(theta1.shape + (self.rank, self.rank), dtype=complex)
        for i, j in product(range(self.rank), repeat=2):
            re, im = trees[i][j]
            out[..., i, j] = re.evaluate(env) + 1j * np.asarray(im.evaluate(env))
        return matfun.hermitize(out)

    def matrix(self, theta1, theta2, t):
        return self._evaluate(self.entries, theta1, theta2, t)

    def matrix_dot(self, theta1, theta2, t):
        return self._evaluate(self.derivative, theta1, theta2, t)

    def check_admissible(self, theta1=None, theta2=None, ts=None, tol=1e-10):
        """Raise EllipticityError if some sampled fiber leaves [lambda1, lambda2]."""
        if theta1 is None:
            grid = 2 * np.pi * np.arange(24) / 24
            theta1, theta2 = (a.ravel() for a in np.meshgrid(grid, grid, indexing="ij"))
        if ts is None:
            ts = np.linspace(*self.interval, 5)
        slack = tol * max(1.0, self.lambda2)
        for t in np.atleast_1d(ts):
            w = np.linalg.eigvalsh(self.matrix(theta1, theta2, t))
            bad = np.flatnonzero((w.min(axis=-1) < self.lambda1 - slack)
                                 | (w.max(axis=-1) > self.lambda2 + slack))
            if bad.size:
                x = bad[0]
                raise EllipticityError(
                    f"weight {self.name or self.source()!r} violates "
                    f"[{self.lambda1}, {self.lambda2}] at grid point {x} "
                    f"(theta1={float(np.atleast_1d(theta1)[x]):.4g}, "
                    f"theta2={float(np.atleast_1d(theta2)[x]):.4g}, t={t:.4g}): "
                    f"eigenvalues in [{w[x].min():.6g}, {w[x].max():.6g}]")


NAMED_FAMILIES = {
    "unit": dict(template="1", lambda1=1.0, lambda2=1.0),
    "bump": dict(template="2 + sin(theta1)", lambda1=1.0, lambda2=3.0),
    "shift": dict(template="2 + t", lambda1=2.0, lambda2=3.0),
    "tilt": dict(template="2 + t*cos(theta1)", lambda1=1.0, lambda2=3.0),
    "crossing": dict(template=[["1", "0"], ["0", "1 + t"]], lambda1=1.0, lambda2=4.0,
                     interval=(1.5, 2.5)),
}


def named_family(name: str, **overrides) -> WeightFamily:
    if name not in NAMED_FAMILIES:
        raise KeyError(f"unknown named family {name!r}; known: {sorted(NAMED_FAMILIES)}")
    spec = dict(NAMED_FAMILIES[name])
    spec.update({k: v for k, v in overrides.items() if v is not None})
    spec.setdefault("interval", (0.0, 1.0))
    return WeightFamily.create(name=name, **spec)


def random_scalar_family(rng: np.random.Generator, modes: int = 3,
                         interval=(0.0, 1.0)) -> WeightFamily:
    """Random smooth positive scalar weight with t-dependent Fourier coefficients."""
    terms = []
    amp = 0.0
    t_abs = max(abs(interval[0]), abs(interval[1]))
    for m in range(1, modes + 1):
        a, b = rng.uniform(-0.4, 0.4, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        trig = "sin" if rng.random() < 0.5 else "cos"
        terms.append(f"({a:.6f} + {b:.6f}*t)*{trig}({m}*theta1 + {phase:.6f})")
        amp += abs(a) + abs(b) * t_abs
    c0 = amp + rng.uniform(0.5, 2.0)
    c1 = rng.uniform(-0.3, 0.3)
    source = f"{c0:.6f} + {c1:.6f}*t + " + " + ".join(terms)
    floor = c0 - amp - abs(c1) * t_abs
    ceil = c0 + amp + abs(c1) * t_abs
    return WeightFamily.create(source, floor, ceil, interval, name="random")


def sample_weight(geom: ModelGeometry, family: WeightFamily, t: float):
    """Fiber matrices ``A_t(x)`` and ``dA_t/dt(x)`` at every grid point, shape (n, r, r)."""
    lo, hi = family.interval
    if not lo - 1e-12 <= t <= hi + 1e-12:
        raise ValueError(f"t={t} outside the family interval [{lo}, {hi}]")
    if family.rank not in (1, geom.fiber_rank):
        raise GeometryError(
            f"weight of rank {family.rank} does not fit fiber rank {geom.fiber_rank}")
    theta1, theta2 = geom.points()
    family.check_admissible(theta1, theta2, [t])
    A = family.matrix(theta1, theta2, t)
    Adot = family.matrix_dot(theta1, theta2, t)
    if family.rank != geom.fiber_rank:
        eye = np.eye(geom.fiber_rank)
        A = A[..., 0, 0][:, None, None] * eye
        Adot = Adot[..., 0, 0][:, None, None] * eye
    return A, Adot


def block_diag(blocks: np.ndarray) -> np.ndarray:
    if blocks.shape[-1] == 1:
        return np.diag(blocks[:, 0, 0])
    return scipy.linalg.block_diag(*blocks)


def conjugate(dirac: np.ndarray, inv_sqrt_blocks: np.ndarray) -> np.ndarray:
    """``Q D Q`` for the block-diagonal field ``Q``."""
    Q = block_diag(inv_sqrt_blocks)
    return matfun.hermitize(Q @ dirac @ Q)


@dataclass(frozen=True)
class AssembledOperator:
    geometry: ModelGeometry
    t: float
    dirac: np.ndarray
    weight_blocks: np.ndarray
    weight_dot_blocks: np.ndarray
    inv_sqrt_blocks: np.ndarray
    conjugated: np.ndarray

    def conjugated_dot(self) -> np.ndarray:
        """t-derivative of the conjugated operator, ``Qdot D Q + Q D Qdot``."""
        Q = block_diag(self.inv_sqrt_blocks)
        Qdot = block_diag(matfun.inv_sqrt_derivative(self.weight_blocks, self.weight_dot_blocks))
        X = Qdot @ self.dirac @ Q
        return X + X.conj().T


def assemble_conjugated(geom: ModelGeometry, family: WeightFamily, t: float) -> AssembledOperator:
    A, Adot = sample_weight(geom, family, t)
    Q = matfun.inv_sqrt_pd(A)
    D = build_dirac(geom)
    return AssembledOperator(geom, float(t), D, A, Adot, Q, conjugate(D, Q))


def weighted_inner(weight_blocks: np.ndarray, psi: np.ndarray, phi: np.ndarray,
                   quad_weight: float = 1.0) -> complex:
    """``sum_x w <A(x) psi(x), phi(x)>``, linear in ``psi``."""
    n, r, _ = weight_blocks.shape
    psi = np.asarray(psi).reshape(n, r)
    phi = np.asarray(phi).reshape(n, r)
    Apsi = np.einsum("xij,xj->xi", weight_blocks, psi)
    return complex(quad_weight * np.vdot(phi, Apsi))


def exact_circle_spectrum(f_samples: Sequence[float], delta: float, k_range) -> np.ndarray:
    """Eigenvalues ``2 pi (k + delta) / int f`` of ``-i psi' = lam f psi``.

    ``k_range`` is an iterable of integers or an inclusive ``(k_lo, k_hi)``
    pair.  The integral uses the uniform grid rule matching the samples.
    """
    f = np.asarray(f_samples, dtype=float)
    if np.any(f <= 0):
        raise ValueError("weight samples must be positive")
    if isinstance(k_range, tuple) and len(k_range) == 2:
        k = np.arange(k_range[0], k_range[1] + 1)
    else:
        k = np.asarray(list(k_range))
    total = 2 * np.pi * f.mean()
    return 2 * np.pi * (k + delta) / total


def exact_torus_spectrum(delta, mode_radius: int) -> np.ndarray:
    """Sorted ``{+-|k + delta|}`` over lattice modes with ``|k_a| <= mode_radius``."""
    k = np.arange(-mode_radius, mode_radius + 1)
    k1, k2 = np.meshgrid(k + delta[0], k + delta[1], indexing="ij")
    r = np.hypot(k1, k2).ravel()
    return np.sort(np.concatenate([-r, r]))


def kernel_dim(op: np.ndarray, zero_tol: float | None = None) -> int:
    w = np.linalg.eigvalsh(matfun.hermitize(np.asarray(op)))
    if zero_tol is None:
        zero_tol = 1e-9 * max(np.max(np.abs(w)), 1.0)
    return int(np.count_nonzero(np.abs(w) <= zero_tol))
