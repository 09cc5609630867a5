import numpy as np
import pytest

from adaptpoisson.geometry import adaptive_panelize, circle, star
from adaptpoisson.layers import v_glue_eval
from adaptpoisson.problems import harmonic, random_gaussians
from adaptpoisson.quadtree import CurveShape
from adaptpoisson.solver import (BULK, ON_FICT, OUTSIDE, STRIP, ProblemSpec, RestartCapError,
                                 StageError, random_interior_points, report, solve)

EPS = 1e-10


@pytest.fixture(scope="module")
def smooth_circle():
    pr = random_gaussians(3, (0.1, 0.5), seed=3)
    return pr, solve(ProblemSpec(pr.f, pr.g, eps=EPS, curve=circle(), exact=pr.u))


def _normal_points(pan, rel):
    d = rel * np.repeat(pan.length[:, None], pan.kit.n, axis=1)
    return pan.z.ravel(), (pan.z - d * pan.normal).ravel(), (pan.z + d * pan.normal).ravel()


def test_harmonic_data_on_circle():
    pr = harmonic()
    sol = solve(ProblemSpec(pr.f, pr.g, eps=EPS, curve=circle(), exact=pr.u))
    P = random_interior_points(sol.boundary, 2000, seed=1)
    assert np.nanmax(sol.errors(P)) <= 10 * EPS
    assert sol.counts()["N_tree"] == 0 or np.abs(sol.volume(P)).max() == 0.0


def test_star_gaussians_within_ten_eps():
    eps = 1e-8
    pr = random_gaussians(5, seed=0)
    sol = solve(ProblemSpec(pr.f, pr.g, eps=eps, curve=star(), exact=pr.u))
    P = random_interior_points(sol.boundary, 2000, seed=1)
    assert np.nanmax(sol.errors(P)) <= 10 * eps


def test_counts_add_up(smooth_circle):
    _, sol = smooth_circle
    c = sol.counts()
    assert c["N"] == c["N_tree"] + c["N_strip"]
    assert c["N_tree"] == c["n_source_leaves"] * (sol.tree.config.p + 1) ** 2
    assert c["N_strip"] == c["n_panels"] * c["strip_grid"][0] * c["strip_grid"][1]


def test_routing_codes(smooth_circle):
    _, sol = smooth_circle
    inner = sol.strip.inner
    on_fict, ins, outs = _normal_points(inner, 1e-3)
    codes = sol.route(np.concatenate([[0j, 5 + 0j], on_fict, ins, outs]))
    n = on_fict.size
    assert codes[0] == BULK and codes[1] == OUTSIDE
    assert np.all(codes[2:2 + n] == ON_FICT)
    assert np.all(codes[2 + n:2 + 2 * n] == BULK)
    assert np.all(codes[2 + 2 * n:] == STRIP)


def test_outside_points_are_flagged(smooth_circle):
    _, sol = smooth_circle
    z = np.array([2.0 + 0j, 0.1 + 0.2j, -1.5j])
    u = sol.evaluate(z)
    assert np.isnan(u[0]) and np.isnan(u[2]) and np.isfinite(u[1])
    assert list(sol.outside_mask(z)) == [True, False, True]


def test_branches_agree_on_fictitious_curve(smooth_circle):
    _, sol = smooth_circle
    assert sol.interface_mismatch() <= 100 * EPS


def test_continuity_across_fictitious_curve(smooth_circle):
    pr, sol = smooth_circle
    for rel in (1e-2, 1e-5, 1e-9):
        on, ins, outs = _normal_points(sol.strip.inner, rel)
        for z in (on, ins, outs):
            assert np.abs(sol.evaluate(z) - pr.u(z.real, z.imag)).max() <= 10 * EPS


def test_no_jump_in_second_differences_across_fictitious_curve(smooth_circle):
    _, sol = smooth_circle
    inner = sol.strip.inner
    h = 1e-3
    for k in (0, 5, 11):
        z0, n = inner.z[k, 7], inner.normal[k, 7]
        line = z0 + h * np.arange(-20, 21) * n
        d2 = np.abs(np.diff(sol.evaluate(line), 2))
        near = d2[17:22]
        rest = np.concatenate([d2[:12], d2[-12:]])
        assert near.max() <= 10 * max(rest.max(), 1e-12)


def test_strip_nodes_reproduced(smooth_circle):
    _, sol = smooth_circle
    ss = sol.strip_solution
    k = 2
    Z = ss.elems[k].Z
    i, j = np.meshgrid(np.arange(1, Z.shape[0] - 1), np.arange(1, Z.shape[1] - 1), indexing="ij")
    z = Z[i, j].ravel()
    expect = (ss.values[k][i, j].ravel()
              + v_glue_eval(sol.tau, sol.sigma, sol.strip.inner, z, sol.problem.close)
              + sol.homogeneous(z))
    assert np.abs(sol.evaluate(z) - expect).max() <= 1e-12 * max(1.0, np.abs(expect).max())


def test_boundary_condition_near_boundary(smooth_circle):
    pr, sol = smooth_circle
    _, ins, _ = _normal_points(sol.boundary, 1e-6)
    assert np.abs(sol.evaluate(ins) - pr.g(ins.real, ins.imag)).max() <= 100 * EPS


def test_pde_residual_by_finite_differences(smooth_circle):
    pr, sol = smooth_circle
    P = random_interior_points(sol.boundary, 100, seed=7, margin=0.05)
    h = 2e-3
    offs = np.array([-2, -1, 1, 2]) * h
    wts = np.array([-1.0, 16.0, 16.0, -1.0]) / (12 * h * h)
    lap = -60.0 / (12 * h * h) * sol.evaluate(P)
    for o, w in zip(offs, wts):
        lap += w * (sol.evaluate(P + o) + sol.evaluate(P + 1j * o))
    fmax = np.abs(pr.f(P.real, P.imag)).max()
    assert np.abs(lap - pr.f(P.real, P.imag)).max() <= 1e-4 * fmax


def test_report_is_deterministic():
    pr = random_gaussians(2, (0.2, 0.5), seed=5)
    P = random_interior_points(adaptive_panelize(circle(), 16, 1e-8), 200, seed=2)
    reps = []
    for _ in range(2):
        sol = solve(ProblemSpec(pr.f, pr.g, eps=1e-8, curve=circle(), exact=pr.u))
        r = report(sol, P)
        r.pop("timings")
        reps.append(r)
    assert reps[0] == reps[1]
    assert reps[0]["n_probes"] == 200


def test_restart_refines_panels_near_narrow_feature():
    c = 0.95
    w = 0.01
    f = lambda x, y: np.exp(-((x - c) ** 2 + y ** 2) / (2 * w * w))
    g = lambda x, y: np.zeros_like(x)
    pan = adaptive_panelize(circle(), 16, 1e-8)
    sol = solve(ProblemSpec(f, g, eps=1e-8, pan=pan))
    assert sol.restarts >= 1
    assert sol.boundary.n_panel > pan.n_panel
    with pytest.raises(RestartCapError) as ei:
        solve(ProblemSpec(f, g, eps=1e-8, pan=pan, max_restarts=0))
    assert ei.value.stage == "restart" and ei.value.flagged


def test_spec_validation():
    f = lambda x, y: x
    with pytest.raises(ValueError):
        ProblemSpec(f, f, eps=1.0, curve=circle())
    with pytest.raises(ValueError):
        ProblemSpec(f, f, eps=1e-8)
    with pytest.raises(ValueError):
        ProblemSpec(f, 3.0, eps=1e-8, curve=circle())


def test_stage_errors_name_the_stage():
    def bad(x, y):
        raise FloatingPointError("boom")
    with pytest.raises(StageError) as ei:
        solve(ProblemSpec(bad, lambda x, y: 0 * x, eps=1e-8, curve=circle()))
    assert ei.value.stage == "vscale"
    assert isinstance(ei.value.cause, FloatingPointError)


def test_random_interior_points_inside():
    pan = adaptive_panelize(star(), 16, 1e-8)
    P = random_interior_points(pan, 500, seed=0, margin=0.02)
    assert P.size == 500
    assert CurveShape(pan).contains(P.real, P.imag).all()
