"""Spectral flow of the weighted problem ``D phi = lam A_t phi``.

Spectra are computed from the conjugated operator ``Q D Q`` with
``Q = A^{-1/2}``.  Eigenvectors ``u`` of the conjugated operator are
Euclidean-orthonormal; eigenfunctions ``phi = Q u / sqrt(w)`` are
orthonormal for the weighted quadrature product ``sum_x w <A phi, phi>``.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import matfun
from .expr import as_expression
from .models import (AssembledOperator, ModelGeometry, WeightFamily, build_dirac,
                     conjugate, kernel_dim, sample_weight)
from .report import CheckResult
from .specmon import SpectralWindow, align_enumeration, arsinh_gaps, best_shift


class ClusterError(ValueError):
    """Pointwise Hellmann-Feynman is undefined inside an eigenvalue cluster."""


class ContourError(ValueError):
    pass


class FrameError(ValueError):
    pass


def _assemble(geom, family, t, strict=True):
    if strict:
        A, Adot = sample_weight(geom, family, t)
    else:
        # finite-difference probes may step just outside the declared interval
        theta1, theta2 = geom.points()
        A = family.matrix(theta1, theta2, t)
        Adot = family.matrix_dot(theta1, theta2, t)
        if family.rank != geom.fiber_rank:
            eye = np.eye(geom.fiber_rank)
            A = A[..., 0, 0][:, None, None] * eye
            Adot = Adot[..., 0, 0][:, None, None] * eye
    Q = matfun.inv_sqrt_pd(A)
    D = build_dirac(geom)
    return AssembledOperator(geom, float(t), D, A, Adot, Q, conjugate(D, Q))


def _apply_blocks(blocks, vectors):
    n, r, _ = blocks.shape
    V = vectors.reshape(n, r, -1)
    return np.einsum("xij,xjm->xim", blocks, V).reshape(n * r, -1)


@dataclass(frozen=True)
class WeightedSpectrum:
    t: float
    window: SpectralWindow
    eigenvalues: np.ndarray
    vectors: np.ndarray
    phi: np.ndarray
    operator: AssembledOperator

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.eigenvalues)))

    def column(self, j: int) -> int:
        if j not in self.window:
            raise IndexError(f"logical index {j} not in window")
        return j - self.window.j_min


def solve_weighted_spectrum(geom: ModelGeometry, family: WeightFamily, t: float,
                            zero_tol: float | None = None, strict: bool = True) -> WeightedSpectrum:
    op = _assemble(geom, family, t, strict)
    w, U = matfun.eigh(op.conjugated)
    if zero_tol is None:
        zero_tol = 1e-9 * max(np.max(np.abs(w)), 1.0)
    window = align_enumeration(w, zero_tol)
    phi = _apply_blocks(op.inv_sqrt_blocks, U) / np.sqrt(geom.quad_weight)
    return WeightedSpectrum(float(t), window, w, U, phi, op)


def weighted_gram(spectrum: WeightedSpectrum) -> np.ndarray:
    """Gram matrix of the eigenfunctions in the weighted product."""
    op = spectrum.operator
    Aphi = _apply_blocks(op.weight_blocks, spectrum.phi)
    return op.geometry.quad_weight * spectrum.phi.conj().T @ Aphi


def hf_slopes(spectrum: WeightedSpectrum) -> np.ndarray:
    """``-lam sum_x w <Adot phi, phi>`` for every computed eigenpair."""
    op = spectrum.operator
    Adot_phi = _apply_blocks(op.weight_dot_blocks, spectrum.phi)
    quad = op.geometry.quad_weight * np.einsum("im,im->m", spectrum.phi.conj(), Adot_phi).real
    return -spectrum.eigenvalues * quad


def _cluster_tol(spectrum, cluster_tol):
    return 1e-7 * spectrum.norm if cluster_tol is None else cluster_tol


def hf_derivative(geom, family, t, j: int, cluster_tol=None, spectrum=None) -> float:
    """Hellmann-Feynman slope of the eigenvalue at logical index ``j``."""
    spectrum = spectrum or solve_weighted_spectrum(geom, family, t)
    c = spectrum.column(j)
    lam = spectrum.eigenvalues
    tol = _cluster_tol(spectrum, cluster_tol)
    near = np.flatnonzero(np.abs(lam - lam[c]) <= tol)
    if near.size > 1:
        raise ClusterError(
            f"eigenvalue {lam[c]:.12g} at index {j} lies in a cluster of size {near.size}; "
            "use hf_cluster_slopes with an enclosing projector")
    return float(hf_slopes(spectrum)[c])


@dataclass(frozen=True)
class RieszProjector:
    matrix: np.ndarray
    contour_center: float
    contour_radius: float
    quad_nodes: int
    resolvent_sup: float
    rank: int

    @property
    def idempotency_defect(self) -> float:
        P = self.matrix
        return float(np.linalg.norm(P @ P - P, 2))

    @property
    def hermitian_defect(self) -> float:
        return float(np.linalg.norm(self.matrix - self.matrix.conj().T, 2))

    @property
    def trace_defect(self) -> float:
        return float(abs(np.trace(self.matrix) - self.rank))

    def frame(self) -> np.ndarray:
        """Orthonormal basis of the range."""
        w, V = np.linalg.eigh(matfun.hermitize(self.matrix))
        return matfun.fix_phases(V[:, w > 0.5])


def _contour_nodes(center, radius, quad_nodes):
    theta = 2 * np.pi * (np.arange(quad_nodes) + 0.5) / quad_nodes
    return center + radius * np.exp(1j * theta)


def _check_contour(eigs, center, radius, gap_tol):
    dist = np.abs(np.abs(eigs - center) - radius)
    if np.any(dist <= gap_tol):
        bad = eigs[np.argmin(dist)]
        raise ContourError(f"eigenvalue {bad:.12g} lies within {gap_tol:.3g} of the contour "
                           f"|z - {center:.6g}| = {radius:.6g}")


def riesz_projector(H: np.ndarray, center: float, radius: float, quad_nodes: int = 64,
                    gap_tol: float | None = None) -> RieszProjector:
    """Spectral projector by the trapezoid rule on a circle contour."""
    if radius <= 0 or quad_nodes < 2:
        raise ValueError("need radius > 0 and quad_nodes >= 2")
    H = np.asarray(H)
    eigs = np.linalg.eigvalsh(matfun.hermitize(H))
    if gap_tol is None:
        gap_tol = 1e-2 * radius
    _check_contour(eigs, center, radius, gap_tol)
    n = H.shape[0]
    eye = np.eye(n)
    P = np.zeros((n, n), dtype=complex)
    sup = 0.0
    for z in _contour_nodes(center, radius, quad_nodes):
        P += (z - center) * np.linalg.solve(z * eye - H, eye)
        sup = max(sup, 1.0 / np.min(np.abs(z - eigs)))
    P /= quad_nodes
    rank = int(np.count_nonzero(np.abs(eigs - center) < radius))
    return RieszProjector(P, float(center), float(radius), quad_nodes, sup, rank)


def contour_around(eigenvalues: np.ndarray, columns: Sequence[int]) -> tuple[float, float]:
    """Circle centred on a cluster with radius half the distance to the nearest outsider."""
    eigenvalues = np.asarray(eigenvalues)
    cols = np.asarray(columns)
    inside = eigenvalues[cols]
    center = float(inside.mean())
    mask = np.ones(eigenvalues.size, dtype=bool)
    mask[cols] = False
    outside = np.abs(eigenvalues[mask] - center)
    if outside.size == 0:
        return center, float(np.max(np.abs(inside - center))) + 1.0
    radius = 0.5 * float(outside.min())
    if np.max(np.abs(inside - center)) >= radius:
        raise ContourError("cluster is not separated from the rest of the spectrum")
    return center, radius


def cluster_columns(eigenvalues: np.ndarray, column: int, tol: float) -> np.ndarray:
    """Columns of the maximal run of eigenvalues chained within ``tol`` of ``column``."""
    lo = hi = column
    while lo > 0 and eigenvalues[lo] - eigenvalues[lo - 1] <= tol:
        lo -= 1
    while hi < eigenvalues.size - 1 and eigenvalues[hi + 1] - eigenvalues[hi] <= tol:
        hi += 1
    return np.arange(lo, hi + 1)


def hf_cluster_slopes(geom, family, t, projector: RieszProjector, operator=None) -> np.ndarray:
    """Eigenvalues of the compression of the derivative of the conjugated operator to Ran P."""
    op = operator or _assemble(geom, family, t)
    F = projector.frame()
    if F.shape[1] == 0:
        raise ValueError("projector has rank 0")
    Hdot = op.conjugated_dot()
    return np.linalg.eigvalsh(matfun.hermitize(F.conj().T @ Hdot @ F))


def _value_at(geom, family, t, j):
    return solve_weighted_spectrum(geom, family, t, strict=False).window(j)


def hf_fd_check(geom, family, t, h: float, j: int, tol: float = 1e-6,
                refine_h: float | None = None) -> CheckResult:
    """Compare the Hellmann-Feynman slope with central differences at steps h and h/2.

    The refinement ratio is measured at ``refine_h`` (default ``100 h``) where
    truncation error dominates rounding.
    """
    start = time.perf_counter()
    slope = hf_derivative(geom, family, t, j)

    def fd(step):
        return (_value_at(geom, family, t + step, j) - _value_at(geom, family, t - step, j)) / (2 * step)

    err = abs(fd(h) - slope)
    rh = 100 * h if refine_h is None else refine_h
    e1, e2 = abs(fd(rh) - slope), abs(fd(rh / 2) - slope)
    # below the noise floor the ratio measures rounding, not truncation
    ratio = e1 / e2 if min(e1, e2) > 1e-10 else None
    order_ok = ratio is None or 3.5 <= ratio <= 4.5
    return CheckResult(
        "hf_fd", bool(err <= tol and order_ok), tol - err,
        dict(t=t, index=j, hf_slope=slope, fd_slope=fd(h), error=err, h=h,
             refine_h=rh, error_refine=e1, error_refine_half=e2, refinement_ratio=ratio),
        time.perf_counter() - start)


def _trial_vectors(geom, psi, t):
    theta1, theta2 = geom.points()
    env = {"theta1": theta1, "theta2": theta2, "t": float(t)}
    chi = np.zeros((geom.n_points, geom.fiber_rank), dtype=complex)
    dchi = np.zeros_like(chi)
    for c, comp in enumerate(psi):
        re, im = (comp, "0") if isinstance(comp, str) else comp
        re, im = as_expression(re), as_expression(im)
        chi[:, c] = re.evaluate(env) + 1j * np.asarray(im.evaluate(env))
        dchi[:, c] = re.diff("t").evaluate(env) + 1j * np.asarray(im.diff("t").evaluate(env))
    chi, dchi = chi.ravel(), dchi.ravel()
    nrm = np.linalg.norm(chi)
    psi_t = chi / nrm
    psi_dot = dchi / nrm - chi * np.vdot(chi, dchi).real / nrm ** 3
    return psi_t, psi_dot


class TrialDerivative(NamedTuple):
    hf_term: float
    residual_term: float
    fd_slope: float
    defect: float


def trial_derivative_residual(geom, family, psi, t: float, h: float = 1e-4) -> TrialDerivative:
    """Split d/dt <psi, H psi> for a normalised trial family into HF and residual parts.

    ``psi`` lists one expression (or ``(re, im)`` pair) per fiber component.
    """
    if len(psi) != geom.fiber_rank:
        raise ValueError("need one trial expression per fiber component")

    def rayleigh(s):
        H = _assemble(geom, family, s, strict=False).conjugated
        v, _ = _trial_vectors(geom, psi, s)
        return float(np.vdot(v, H @ v).real)

    op = _assemble(geom, family, t, strict=False)
    v, vdot = _trial_vectors(geom, psi, t)
    H = op.conjugated
    lam = float(np.vdot(v, H @ v).real)
    hf = float(np.vdot(v, op.conjugated_dot() @ v).real)
    residual = float(2 * np.vdot(vdot, H @ v - lam * v).real)
    fd = (rayleigh(t + h) - rayleigh(t - h)) / (2 * h)
    return TrialDerivative(hf, residual, fd, abs(fd - hf - residual))


def lipschitz_constant(geom, family, interval=None, samples: int = 101) -> float:
    """``max_{t, x} ||Adot_t(x)||_op / lambda1`` over a uniform parameter sample."""
    if samples < 2:
        raise ValueError("need at least two samples")
    lo, hi = family.interval if interval is None else interval
    theta1, theta2 = geom.points()
    best = 0.0
    for t in np.linspace(lo, hi, samples):
        Adot = family.matrix_dot(theta1, theta2, t)
        best = max(best, float(np.max(matfun.opnorm(Adot))))
    return best / family.lambda1


@dataclass
class FlowRecord:
    geometry: ModelGeometry
    family: WeightFamily
    t_grid: np.ndarray
    spectra: list[WeightedSpectrum]
    lipschitz_constant: float
    verdicts: dict[str, CheckResult] = field(default_factory=dict)
    branches: "BranchTracking | None" = None

    @property
    def windows(self) -> list[SpectralWindow]:
        return [s.window for s in self.spectra]

    def common_interior(self, fraction: float = 0.25) -> tuple[int, int]:
        lo = max(w.interior(fraction)[0] for w in self.windows)
        hi = min(w.interior(fraction)[1] for w in self.windows)
        if lo > hi:
            raise ValueError("windows share no interior index")
        return lo, hi


def compute_flow(geom: ModelGeometry, family: WeightFamily, t_grid=None, samples: int = 21,
                 workers: int | None = None, lipschitz_samples: int | None = None) -> FlowRecord:
    """Spectra on a parameter grid; independent points run on a thread pool."""
    if t_grid is None:
        t_grid = np.linspace(*family.interval, samples)
    t_grid = np.asarray(sorted(float(t) for t in t_grid))
    if t_grid.size < 2:
        raise ValueError("flow needs at least two parameter values")
    solve = lambda t: solve_weighted_spectrum(geom, family, t)  # noqa: E731
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            spectra = list(pool.map(solve, t_grid))
    else:
        spectra = [solve(t) for t in t_grid]
    n_lip = lipschitz_samples or max(101, 4 * t_grid.size)
    L = lipschitz_constant(geom, family, (t_grid[0], t_grid[-1]), n_lip)
    return FlowRecord(geom, family, t_grid, spectra, L)


def verify_arsinh_lipschitz(flow: FlowRecord, slack_tol: float = 1e-6,
                            index_range: tuple[int, int] | None = None) -> CheckResult:
    """Pairwise check of ``|arsinh s_t(j) - arsinh s_s(j)| <= L |t - s|``."""
    start = time.perf_counter()
    lo, hi = index_range or flow.common_interior()
    for w in flow.windows:
        if lo not in w or hi not in w:
            raise ValueError(f"index range [{lo}, {hi}] not covered at every grid point")
    vals = np.arcsinh(np.array([w.take(lo, hi) for w in flow.windows]))
    ts = flow.t_grid
    L = flow.lipschitz_constant
    gaps = np.abs(vals[:, None, :] - vals[None, :, :])
    dt = np.abs(ts[:, None] - ts[None, :])[:, :, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(gaps == 0, 0.0, gaps / (L * dt))
    off_diag = ~np.eye(ts.size, dtype=bool)
    ratio = np.where(off_diag[:, :, None], ratio, 0.0)
    a, b, k = np.unravel_index(np.argmax(ratio), ratio.shape)
    worst = float(ratio[a, b, k])
    excluded = sum(len(w) for w in flow.windows) // len(flow.windows) - (hi - lo + 1)
    return CheckResult(
        "arsinh_lipschitz", bool(worst <= 1 + slack_tol), 1 + slack_tol - worst,
        dict(worst_ratio=worst, pair=(float(ts[min(a, b)]), float(ts[max(a, b)])),
             index=int(lo + k), lipschitz_constant=L, index_range=(lo, hi),
             excluded_indices=int(excluded), max_distance=float(gaps.max())),
        time.perf_counter() - start)


def slope_bound_check(flow: FlowRecord, index_range=None, rtol: float = 1e-9) -> CheckResult:
    """``|lam'(t)| <= L |lam(t)|`` at every grid point and index."""
    start = time.perf_counter()
    lo, hi = index_range or flow.common_interior()
    L = flow.lipschitz_constant
    worst, where, violations = 0.0, None, 0
    for spec in flow.spectra:
        cols = np.arange(lo, hi + 1) - spec.window.j_min
        lam = spec.eigenvalues[cols]
        slope = hf_slopes(spec)[cols]
        bound = L * np.abs(lam)
        violations += int(np.count_nonzero(np.abs(slope) > bound * (1 + rtol) + 1e-14))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(bound > 0, np.abs(slope) / bound, np.where(slope == 0, 0.0, np.inf))
        k = int(np.argmax(ratio))
        if ratio[k] > worst or where is None:
            worst, where = float(ratio[k]), (spec.t, int(lo + k))
    return CheckResult("slope_bound", violations == 0, 1 + rtol - worst,
                       dict(worst_ratio=worst, attained_at=where, violations=violations,
                            lipschitz_constant=L, index_range=(lo, hi)),
                       time.perf_counter() - start)


def kernel_constancy_check(flow: FlowRecord) -> CheckResult:
    start = time.perf_counter()
    reference = kernel_dim(build_dirac(flow.geometry))
    dims = [w.zero_count for w in flow.windows]
    return CheckResult("kernel_constancy", all(d == reference for d in dims), None,
                       dict(unweighted=reference, weighted=sorted(set(dims))),
                       time.perf_counter() - start)


def enumeration_stability_check(flow_or_windows, max_shift: int = 2) -> CheckResult:
    """Sign convention, constant kernel size and zero optimal shift between neighbours."""
    start = time.perf_counter()
    windows = flow_or_windows.windows if isinstance(flow_or_windows, FlowRecord) else list(flow_or_windows)
    problems = []
    for i, w in enumerate(windows):
        if -1 in w and not w(-1) < 0:
            problems.append(f"step {i}: s(-1) = {w(-1)} is not negative")
        if 0 in w and not w(0) >= 0:
            problems.append(f"step {i}: s(0) = {w(0)} is negative")
    zeros = {w.zero_count for w in windows}
    if len(zeros) > 1:
        problems.append(f"kernel multiplicity varies: {sorted(zeros)}")
    shifts = []
    for i in range(len(windows) - 1):
        k, _ = best_shift(windows[i], windows[i + 1], max_shift)
        shifts.append(k)
        if k != 0:
            problems.append(f"steps {i}->{i + 1}: optimal shift {k}")
    return CheckResult("enumeration_stability", not problems, None,
                       dict(problems=problems, shifts=sorted(set(shifts)),
                            kernel_multiplicity=sorted(zeros)),
                       time.perf_counter() - start)


@dataclass(frozen=True)
class ProjectorDerivative:
    matrix: np.ndarray
    fd_matrix: np.ndarray
    fd_error: float
    ranks: tuple[int, int, int]
    trace: complex


def projector_derivative(geom, family, t, contour: tuple[float, float], h: float = 1e-4,
                         quad_nodes: int = 64) -> ProjectorDerivative:
    """Contour-integral derivative of the Riesz projector, with a central-difference check."""
    center, radius = contour
    op = _assemble(geom, family, t, strict=False)
    H = op.conjugated
    Hdot = op.conjugated_dot()
    P0 = riesz_projector(H, center, radius, quad_nodes)
    n = H.shape[0]
    eye = np.eye(n)
    Pdot = np.zeros((n, n), dtype=complex)
    for z in _contour_nodes(center, radius, quad_nodes):
        R = np.linalg.solve(z * eye - H, eye)
        Pdot += (z - center) * (R @ Hdot @ R)
    Pdot /= quad_nodes
    Pp = riesz_projector(_assemble(geom, family, t + h, strict=False).conjugated, center, radius, quad_nodes)
    Pm = riesz_projector(_assemble(geom, family, t - h, strict=False).conjugated, center, radius, quad_nodes)
    fd = (Pp.matrix - Pm.matrix) / (2 * h)
    return ProjectorDerivative(Pdot, fd, float(np.linalg.norm(Pdot - fd, 2)),
                               (Pm.rank, P0.rank, Pp.rank), complex(np.trace(Pdot)))


def projector_path(geom, family, ts, contour, quad_nodes: int = 64) -> list[RieszProjector]:
    center, radius = contour
    return [riesz_projector(_assemble(geom, family, t).conjugated, center, radius, quad_nodes)
            for t in ts]


@dataclass(frozen=True)
class FramePath:
    frames: list[np.ndarray]
    orthonormality_defect: float
    range_defect: float
    step_ratio: float


def c1_frame(projectors: Sequence[np.ndarray], basis0: np.ndarray) -> FramePath:
    """Frames ``P_t u0 G^{-1/2}`` along a projector path.

    ``step_ratio`` is the largest ratio between a consecutive frame step and the
    corresponding projector step.
    """
    Ps = [p.matrix if isinstance(p, RieszProjector) else np.asarray(p) for p in projectors]
    U0 = np.asarray(basis0)
    P0 = Ps[0]
    m = U0.shape[1]
    frames, ortho, rng_def = [], 0.0, 0.0
    for i, P in enumerate(Ps):
        gap = np.linalg.norm(P - P0, 2)
        if gap >= 1:
            raise FrameError(f"projector at step {i} is {gap:.3f} away from the start; subdivide")
        V = P @ U0
        G = V.conj().T @ V
        gw, gV = np.linalg.eigh(matfun.hermitize(G))
        if gw.min() < 1e-8:
            raise FrameError(f"Gram matrix near-singular at step {i}; subdivide the path")
        U = V @ ((gV / np.sqrt(gw)) @ gV.conj().T)
        frames.append(U)
        ortho = max(ortho, float(np.linalg.norm(U.conj().T @ U - np.eye(m), 2)))
        rng_def = max(rng_def, float(np.linalg.norm(U - P @ U, 2)))
    ratio = 0.0
    for i in range(len(Ps) - 1):
        dp = np.linalg.norm(Ps[i + 1] - Ps[i], 2)
        du = np.linalg.norm(frames[i + 1] - frames[i], 2)
        if dp > 0:
            ratio = max(ratio, float(du / dp))
        elif du > 1e-12:
            ratio = np.inf
    return FramePath(frames, ortho, rng_def, ratio)


def weighted_frame(frame: np.ndarray, inv_sqrt_blocks: np.ndarray, quad_weight: float = 1.0) -> np.ndarray:
    """``phi_i = A^{-1/2} u_i``, scaled for the quadrature weight."""
    return _apply_blocks(inv_sqrt_blocks, np.asarray(frame)) / np.sqrt(quad_weight)


@dataclass(frozen=True)
class CrossingEvent:
    branches: tuple[int, int]
    t_estimate: float
    t_interval: tuple[float, float]
    sorted_indices: tuple[int, int]
    kink: float
    kink_arsinh: float
    branch_slope_jump: float


@dataclass
class BranchTracking:
    t_grid: np.ndarray
    branch_ids: np.ndarray
    columns: np.ndarray
    values: np.ndarray
    residuals: np.ndarray
    ambiguous: list[tuple[int, int]]
    crossings: list[CrossingEvent]
    focus: tuple[int, int]

    def path(self, branch_id: int) -> np.ndarray:
        return self.values[:, int(np.flatnonzero(self.branch_ids == branch_id)[0])]

    def focus_branches(self) -> np.ndarray:
        return np.flatnonzero(self._in_focus())

    def _in_focus(self):
        j_min = self.branch_ids[0]
        logical = self.columns + j_min
        return np.any((logical >= self.focus[0]) & (logical <= self.focus[1]), axis=0)


def _continuation_basis(spec: WeightedSpectrum, tol: float) -> np.ndarray:
    """Eigenvectors with each cluster rotated to diagonalise the derivative.

    Inside a cluster the eigensolver basis is arbitrary; the eigenvectors of
    the compressed derivative are the ones that continue smoothly.
    """
    lam = spec.eigenvalues
    U = spec.vectors.copy()
    breaks = np.flatnonzero(np.diff(lam) > tol) + 1
    groups = [g for g in np.split(np.arange(lam.size), breaks) if g.size > 1]
    if groups:
        Hdot = spec.operator.conjugated_dot()
        for g in groups:
            Ug = U[:, g]
            _, R = np.linalg.eigh(matfun.hermitize(Ug.conj().T @ Hdot @ Ug))
            U[:, g] = Ug @ R
    return U


def _one_sided_slope(ts, ys, tc, side, points=3):
    eps = 1e-12 * max(1.0, abs(tc))
    if side < 0:
        idx = np.flatnonzero(ts <= tc + eps)[-points:]
    else:
        idx = np.flatnonzero(ts >= tc - eps)[:points]
    if idx.size < 2:
        return None
    coeffs = np.polyfit(ts[idx] - tc, ys[idx], min(2, idx.size - 1))
    return float(coeffs[-2])


def _jump(ts, ys, tc):
    left, right = _one_sided_slope(ts, ys, tc, -1), _one_sided_slope(ts, ys, tc, +1)
    if left is None or right is None:
        return float("nan")
    return abs(right - left)


def _overlaps(basis_a, basis_b):
    return np.abs(basis_a.conj().T @ basis_b) ** 2


def _assignment(O):
    rows, cols = linear_sum_assignment(-O)
    perm = np.empty(O.shape[0], dtype=int)
    perm[rows] = cols
    return perm


def track_branches(flow: FlowRecord, focus: tuple[int, int] | None = None,
                   match_tol: float = 0.25, cluster_tol: float | None = None,
                   max_depth: int = 6, pad: int = 2) -> BranchTracking:
    """Label eigenvalue branches by eigenvector overlap between neighbouring grid points.

    Branch ids are the logical indices at the first grid point.  A step whose
    matching is ambiguous for a branch within ``pad`` of the ``focus`` index
    range is bisected (up to ``max_depth`` times) with intermediate spectra.
    Crossings are reported for pairs of branches that visit ``focus``.
    """
    spectra = flow.spectra
    sizes = {len(s.eigenvalues) for s in spectra}
    j_mins = {s.window.j_min for s in spectra}
    if len(sizes) != 1 or len(j_mins) != 1:
        raise ValueError("branch tracking needs identically indexed windows")
    N = sizes.pop()
    j_min = j_mins.pop()
    nt = len(spectra)
    focus = focus or flow.common_interior()
    tol = cluster_tol if cluster_tol is not None else 1e-7 * max(s.norm for s in spectra)
    watch_lo, watch_hi = focus[0] - pad - j_min, focus[1] + pad - j_min

    def match(sa, ba, sb, bb, watch, depth):
        O = _overlaps(ba, bb)
        perm = _assignment(O)
        top2 = np.sort(O[watch], axis=1)[:, -2:]
        bad = watch[top2[:, 1] - top2[:, 0] < match_tol]
        if bad.size and depth < max_depth:
            sm = solve_weighted_spectrum(flow.geometry, flow.family, 0.5 * (sa.t + sb.t))
            bm = _continuation_basis(sm, tol)
            p1, _ = match(sa, ba, sm, bm, watch, depth + 1)
            p2, bad = match(sm, bm, sb, bb, p1[watch], depth + 1)
            return p2[p1], bad
        return perm, bad

    columns = np.zeros((nt, N), dtype=int)
    columns[0] = np.arange(N)
    ambiguous = []
    bases = [_continuation_basis(s, tol) for s in spectra]
    for k in range(nt - 1):
        watch = np.arange(max(watch_lo, 0), min(watch_hi, N - 1) + 1)
        perm, bad = match(spectra[k], bases[k], spectra[k + 1], bases[k + 1], watch, 0)
        for col in bad:
            ambiguous.append((k, int(j_min + np.flatnonzero(columns[k] == col)[0])))
        columns[k + 1] = perm[columns[k]]

    values = np.array([s.eigenvalues[columns[k]] for k, s in enumerate(spectra)])
    residuals = np.empty_like(values)
    for k, s in enumerate(spectra):
        H = s.operator.conjugated
        U = s.vectors[:, columns[k]]
        R = H @ U - U * values[k]
        residuals[k] = np.linalg.norm(R, axis=0) / max(s.norm, 1.0)

    tracking = BranchTracking(flow.t_grid, j_min + np.arange(N), columns, values,
                              residuals, ambiguous, [], tuple(focus))
    tracking.crossings = _find_crossings(flow, tracking, tol)
    return tracking


def _sign_changes(diff, tol):
    signs = np.where(np.abs(diff) <= tol, 0, np.sign(diff)).astype(int)
    nz = np.flatnonzero(signs)
    events = []
    for a, b in zip(nz[:-1], nz[1:]):
        if signs[a] != signs[b]:
            events.append((int(a), int(b)))
    return events


def _find_crossings(flow, tracking, tol):
    ts = tracking.t_grid
    vals = tracking.values
    windows = flow.windows
    ids = tracking.focus_branches()
    events = []
    for p, a in enumerate(ids):
        for b in ids[p + 1:]:
            for ka, kb in _sign_changes(vals[:, a] - vals[:, b], tol):
                if kb - ka > 1:
                    tc = 0.5 * (ts[ka + 1] + ts[kb - 1])
                else:
                    da, db = vals[ka, a] - vals[ka, b], vals[kb, a] - vals[kb, b]
                    tc = ts[ka] + (ts[kb] - ts[ka]) * da / (da - db)
                pos = sorted(int(tracking.columns[ka, c] + tracking.branch_ids[0]) for c in (a, b))
                kinks, kinks_as = [], []
                for j in pos:
                    series = np.array([w(j) for w in windows])
                    kinks.append(_jump(ts, series, tc))
                    kinks_as.append(_jump(ts, np.arcsinh(series), tc))
                smooth = max(_jump(ts, vals[:, a], tc), _jump(ts, vals[:, b], tc))
                events.append(CrossingEvent(
                    (int(tracking.branch_ids[a]), int(tracking.branch_ids[b])), float(tc),
                    (float(ts[ka]), float(ts[kb])), tuple(pos), float(max(kinks)),
                    float(max(kinks_as)), float(smooth)))
    events.sort(key=lambda e: (e.t_estimate, e.branches))
    return events


def counting_slope(eigenvalues: np.ndarray, cutoffs: Sequence[float]) -> float:
    """Least-squares slope of ``#{|lam| <= c}`` against the cutoff ``c``."""
    lam = np.abs(np.asarray(eigenvalues))
    cutoffs = np.asarray(cutoffs, dtype=float)
    counts = np.array([np.count_nonzero(lam <= c) for c in cutoffs])
    return float(np.polyfit(cutoffs, counts, 1)[0])
