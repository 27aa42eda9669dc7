import math

import numpy as np
import pytest

from conftest import random_pd
from specflow.flow import (ClusterError, ContourError, FrameError, c1_frame, cluster_columns,
                           compute_flow, contour_around, enumeration_stability_check,
                           hf_cluster_slopes, hf_derivative, hf_fd_check,
                           kernel_constancy_check, lipschitz_constant, projector_derivative,
                           projector_path, riesz_projector, slope_bound_check,
                           solve_weighted_spectrum, track_branches,
                           trial_derivative_residual, verify_arsinh_lipschitz, weighted_frame,
                           weighted_gram)
from specflow.matfun import inv_sqrt_pd
from specflow.models import ModelGeometry, WeightFamily, named_family
from specflow.specmon import SpectralWindow, shift

CIRCLE = ModelGeometry.circle_scalar(64)
SYSTEM = ModelGeometry.circle_system(32, 0.5, 2)


# eigenvalue problems

def test_unit_weight_gives_unweighted_spectrum():
    spec = solve_weighted_spectrum(CIRCLE, named_family("unit"), 0.0)
    assert np.allclose(spec.eigenvalues, np.arange(-32, 32) + 0.5, atol=1e-12)
    assert spec.window.j_min == -32


def test_bump_interior_and_orthonormality():
    spec = solve_weighted_spectrum(CIRCLE, named_family("bump"), 0.0)
    for j in range(-8, 8):
        assert spec.window(j) == pytest.approx((j + 0.5) / 2, rel=1e-6)
    G = weighted_gram(spec)
    assert np.linalg.norm(G - np.eye(G.shape[0]), 2) <= 1e-10


# Hellmann-Feynman

@pytest.mark.parametrize("name, j, expected", [
    ("tilt", 0, 0.0), ("tilt", 3, 0.0), ("tilt", -5, 0.0),
    ("shift", 0, -0.125), ("shift", 2, -2.5 / 4), ("shift", -1, 0.125),
    ("unit", 1, 0.0),
])
def test_hf_examples(name, j, expected):
    assert hf_derivative(CIRCLE, named_family(name), 0.0, j) == pytest.approx(expected, abs=1e-10)


def test_hf_refuses_clusters():
    with pytest.raises(ClusterError):
        hf_derivative(SYSTEM, named_family("crossing"), 2.0, 1)


@pytest.mark.parametrize("name, j", [("tilt", 0), ("shift", 0), ("unit", 0)])
def test_hf_against_finite_differences(name, j):
    t = 0.5
    r = hf_fd_check(CIRCLE, named_family(name), t, 1e-4, j)
    assert r.passed, r.details
    assert r.details["error"] <= 1e-6
    ratio = r.details["refinement_ratio"]
    assert ratio is None or 3.5 <= ratio <= 4.5
    if name == "unit":
        assert abs(r.details["fd_slope"]) <= 1e-9


def test_hf_refinement_ratio_generic_family():
    fam = WeightFamily.create("2 + sin(t*theta1 + t) * 0.5 + 0.3*cos(theta1)*t*t", 1.0, 3.5)
    r = hf_fd_check(ModelGeometry.circle_scalar(32), fam, 0.5, 1e-4, 1)
    assert r.passed
    assert 3.5 <= r.details["refinement_ratio"] <= 4.5


def test_cluster_slopes_simple_eigenvalue():
    spec = solve_weighted_spectrum(CIRCLE, named_family("tilt"), 0.4)
    c = spec.column(2)
    center, radius = contour_around(spec.eigenvalues, [c])
    P = riesz_projector(spec.operator.conjugated, center, radius)
    slopes = hf_cluster_slopes(CIRCLE, named_family("tilt"), 0.4, P)
    assert slopes.shape == (1,)
    assert slopes[0] == pytest.approx(hf_derivative(CIRCLE, named_family("tilt"), 0.4, 2), abs=1e-9)


def test_cluster_slopes_at_crossing():
    fam = named_family("crossing")
    spec = solve_weighted_spectrum(SYSTEM, fam, 2.0)
    c = spec.column(1)
    cols = cluster_columns(spec.eigenvalues, c, 1e-7 * spec.norm)
    assert cols.size == 2
    P = riesz_projector(spec.operator.conjugated, *contour_around(spec.eigenvalues, cols))
    slopes = hf_cluster_slopes(SYSTEM, fam, 2.0, P)
    assert np.allclose(np.sort(slopes), [-0.5 / 3, 0.0], atol=1e-10)
    # invariance under rotation of the frame
    F = P.frame()
    rng = np.random.default_rng(0)
    R, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    Hdot = spec.operator.conjugated_dot()
    G = F @ R
    again = np.linalg.eigvalsh(0.5 * (G.conj().T @ Hdot @ G + (G.conj().T @ Hdot @ G).conj().T))
    assert np.allclose(np.sort(again), np.sort(slopes), atol=1e-12)


# trial families

def test_trial_derivative_eigenvector_family():
    # the gauge-shifted antiperiodic mode k=0 is the constant vector
    r = trial_derivative_residual(CIRCLE, named_family("shift"), ["1"], 0.5)
    assert abs(r.residual_term) <= 1e-8
    assert r.defect <= 1e-6
    assert r.hf_term == pytest.approx(-0.5 / 2.5 ** 2, abs=1e-10)


def test_trial_derivative_non_eigenvector():
    fam = named_family("tilt")
    r = trial_derivative_residual(CIRCLE, fam, ["2 + sin(theta1) + t*cos(2*theta1)"], 0.5)
    assert abs(r.residual_term) > 1e-3
    assert r.defect <= 1e-6


def test_trial_residual_shrinks_with_perturbation():
    fam = named_family("shift")
    sizes = []
    for eps in (1e-1, 1e-2, 1e-3):
        r = trial_derivative_residual(CIRCLE, fam, [(f"1 + {eps}*t*cos(theta1)", "0")], 0.5)
        assert r.defect <= 1e-6
        sizes.append(abs(r.residual_term))
    assert sizes[0] > sizes[1] > sizes[2]


def test_trial_needs_one_expression_per_component():
    with pytest.raises(ValueError):
        trial_derivative_residual(SYSTEM, named_family("crossing"), ["1"], 2.0)


# Lipschitz constant and flows

def test_lipschitz_examples():
    assert lipschitz_constant(CIRCLE, named_family("shift")) == pytest.approx(0.5)
    assert lipschitz_constant(CIRCLE, named_family("unit")) == 0.0
    fam = named_family("crossing", interval=(0.0, 1.0))
    assert lipschitz_constant(SYSTEM, fam) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        lipschitz_constant(CIRCLE, named_family("shift"), samples=1)


@pytest.fixture(scope="module")
def shift_flow():
    return compute_flow(ModelGeometry.circle_scalar(64), named_family("shift"), samples=21)


def test_shift_flow_against_oracle(shift_flow):
    for t, w in zip(shift_flow.t_grid, shift_flow.windows):
        for j in range(-8, 8):
            assert w(j) == pytest.approx((j + 0.5) / (2 + t), rel=1e-12)


def test_arsinh_lipschitz_oracle_family(shift_flow):
    r = verify_arsinh_lipschitz(shift_flow)
    assert r.passed
    assert r.details["worst_ratio"] <= 1 + 1e-6
    assert r.details["excluded_indices"] > 0


def test_arsinh_lipschitz_constant_weight():
    flow = compute_flow(CIRCLE, named_family("unit"), samples=5)
    r = verify_arsinh_lipschitz(flow)
    assert r.passed and r.details["max_distance"] == 0.0


def test_arsinh_lipschitz_through_crossing():
    flow = compute_flow(SYSTEM, named_family("crossing"), samples=21)
    r = verify_arsinh_lipschitz(flow, slack_tol=1e-3)
    assert r.passed


def test_arsinh_lipschitz_misaligned_range(shift_flow):
    with pytest.raises(ValueError):
        verify_arsinh_lipschitz(shift_flow, index_range=(-100, 100))


def test_slope_bound(shift_flow):
    r = slope_bound_check(shift_flow)
    assert r.passed and r.details["violations"] == 0


def test_enumeration_stability(shift_flow):
    r = enumeration_stability_check(shift_flow)
    assert r.passed and r.details["shifts"] == [0]
    flow = compute_flow(ModelGeometry.circle_scalar(32, 0.0), named_family("tilt"), samples=5)
    r = enumeration_stability_check(flow)
    assert r.passed and r.details["kernel_multiplicity"] == [1]
    assert kernel_constancy_check(flow).passed


def test_enumeration_stability_negative_control(shift_flow):
    windows = list(shift_flow.windows)
    windows[3] = shift(windows[3], 1)
    assert not enumeration_stability_check(windows).passed
    bad = SpectralWindow([-1.0, 0.5, 1.0], 0)
    assert not enumeration_stability_check([bad, bad]).passed


def test_flow_is_schedule_independent():
    fam = named_family("tilt")
    a = compute_flow(CIRCLE, fam, samples=6, workers=1)
    b = compute_flow(CIRCLE, fam, samples=6, workers=4)
    for x, y in zip(a.spectra, b.spectra):
        assert np.array_equal(x.eigenvalues, y.eigenvalues)


# projectors and frames

def test_riesz_diagonal_examples():
    H = np.diag([-1.0, 0.5, 2.0])
    P = riesz_projector(H, 0.5, 1.0)
    # outside eigenvalues sit at 1.5 radii: trapezoid error ~ (2/3)^nodes
    assert np.allclose(P.matrix, np.diag([0, 1, 0]), atol=1e-10)
    assert np.allclose(riesz_projector(H, 0.5, 1.0, 128).matrix, np.diag([0, 1, 0]), atol=1e-14)
    assert P.rank == 1
    assert np.allclose(riesz_projector(H, 10.0, 1.0).matrix, 0, atol=1e-12)
    assert np.allclose(riesz_projector(H, 0.5, 5.0).matrix, np.eye(3), atol=1e-12)
    with pytest.raises(ContourError):
        riesz_projector(H, 0.5, 1.5)


def test_riesz_invariants_on_model():
    spec = solve_weighted_spectrum(SYSTEM, named_family("crossing"), 1.7)
    cols = [spec.column(1), spec.column(2)]
    P = riesz_projector(spec.operator.conjugated, *contour_around(spec.eigenvalues, cols))
    assert P.idempotency_defect <= 1e-8
    assert P.hermitian_defect <= 1e-10
    assert P.trace_defect <= 1e-8
    assert P.rank == 2
    assert P.resolvent_sup > 0


def test_projector_derivative_constant_weight():
    d = projector_derivative(CIRCLE, named_family("unit"), 0.5, (0.5, 0.5))
    assert np.linalg.norm(d.matrix) <= 1e-12


def test_projector_derivative_generic():
    fam = named_family("tilt")
    spec = solve_weighted_spectrum(CIRCLE, fam, 0.5)
    contour = contour_around(spec.eigenvalues, [spec.column(1)])
    d = projector_derivative(CIRCLE, fam, 0.5, contour)
    assert d.fd_error <= 1e-6
    assert len(set(d.ranks)) == 1
    assert abs(d.trace) <= 1e-8
    path = projector_path(CIRCLE, fam, np.linspace(0.45, 0.55, 11), contour)
    assert {p.rank for p in path} == {1}


def _rotating_projectors(angles):
    out = []
    for a in angles:
        v = np.array([math.cos(a), math.sin(a), 0.0])
        out.append(np.outer(v, v))
    return out


def test_c1_frame_constant_and_rotating():
    P = np.diag([0.0, 1.0, 0.0]).astype(complex)
    path = c1_frame([P] * 4, np.array([[0.0], [1.0], [0.0]]))
    assert all(np.allclose(f, path.frames[0]) for f in path.frames)
    angles = np.linspace(0, 0.6, 13)
    path = c1_frame(_rotating_projectors(angles), np.array([[1.0], [0.0], [0.0]]))
    for a, f in zip(angles, path.frames):
        v = np.array([math.cos(a), math.sin(a), 0.0])
        assert abs(abs(np.vdot(v, f[:, 0])) - 1) <= 1e-12
    assert path.orthonormality_defect <= 1e-10
    assert path.range_defect <= 1e-9
    assert path.step_ratio < 2


def test_c1_frame_refuses_large_motion():
    with pytest.raises(FrameError):
        c1_frame(_rotating_projectors([0.0, math.pi / 2]), np.array([[1.0], [0.0], [0.0]]))


def test_c1_frame_on_model_path():
    fam = named_family("tilt")
    spec = solve_weighted_spectrum(CIRCLE, fam, 0.5)
    cols = [spec.column(j) for j in (0, 1)]
    contour = contour_around(spec.eigenvalues, cols)
    ts = np.linspace(0.4, 0.6, 11)
    Ps = projector_path(CIRCLE, fam, ts, contour)
    path = c1_frame(Ps, Ps[0].frame())
    assert path.orthonormality_defect <= 1e-10
    assert path.range_defect <= 1e-9
    for t, U in zip(ts, path.frames):
        s = solve_weighted_spectrum(CIRCLE, fam, t)
        phi = weighted_frame(U, s.operator.inv_sqrt_blocks, CIRCLE.quad_weight)
        A = s.operator.weight_blocks[:, 0, 0]
        G = CIRCLE.quad_weight * phi.conj().T @ (A[:, None] * phi)
        assert np.linalg.norm(G - np.eye(2)) <= 1e-10


def test_weighted_frame_examples(rng):
    U, _ = np.linalg.qr(rng.normal(size=(12, 3)))
    eye = np.broadcast_to(np.eye(2), (6, 2, 2))
    assert np.allclose(weighted_frame(U, eye), U)
    c = 4.0
    phi = weighted_frame(U, np.broadcast_to(np.eye(2) / 2, (6, 2, 2)))
    assert np.allclose(phi, U / math.sqrt(c))
    blocks = np.stack([random_pd(rng, 2, 10.0) for _ in range(6)])
    phi = weighted_frame(U, inv_sqrt_pd(blocks))
    Aphi = np.einsum("xij,xjm->xim", blocks, phi.reshape(6, 2, 3)).reshape(12, 3)
    assert np.linalg.norm(phi.conj().T @ Aphi - np.eye(3)) <= 1e-10


# branch tracking

def test_crossing_tracking():
    flow = compute_flow(SYSTEM, named_family("crossing"), samples=21)
    tr = track_branches(flow, focus=(1, 2))
    assert len(tr.crossings) == 1
    ev = tr.crossings[0]
    assert abs(ev.t_estimate - 2.0) <= 0.05
    assert abs(ev.kink - 1.5 / 9) <= 0.1 * 1.5 / 9
    assert ev.branch_slope_jump <= 1e-3
    assert np.max(tr.residuals) <= 1e-10


def test_no_crossings_for_scalar_weight(shift_flow):
    tr = track_branches(shift_flow)
    assert tr.crossings == [] and tr.ambiguous == []
    for c in range(tr.columns.shape[1]):
        assert np.all(tr.columns[:, c] == c)


def test_constant_weight_branches_constant():
    flow = compute_flow(CIRCLE, named_family("unit"), samples=4)
    tr = track_branches(flow)
    assert tr.crossings == []
    assert np.allclose(tr.values, tr.values[0])
