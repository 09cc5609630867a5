"""End-to-end acceptance checks; each test records one criterion line."""
import time

import numpy as np
import pytest

from adaptpoisson.bie import assemble_nystrom, solve_bie
from adaptpoisson.geometry import adaptive_panelize, circle, ellipse, make_curve, raindrop, star, uniform_panelization
from adaptpoisson.layers import dlp_eval, dlp_on_curve
from adaptpoisson.problems import cusp_gaussians, random_gaussians
from adaptpoisson.quadtree import (TreeConfig, balance_violations, build_truncated_tree, regular_tree,
                                   strip_violations)
from adaptpoisson.solver import ProblemSpec, random_interior_points, solve
from adaptpoisson.strip import assemble_strip_system, build_strip_mesh
from adaptpoisson.strip_geometry import build_fictitious_curve, build_strip
from adaptpoisson.volume import VolumePotentialEvaluator, verify_geometric_decay

from conftest import jump_errors, resolve_density, smooth_density, smooth_source
from test_volume import _nquad_oracle

pytestmark = pytest.mark.slow


def _warm_up():
    pr = random_gaussians(1, (0.2, 0.3), seed=0)
    solve(ProblemSpec(pr.f, pr.g, eps=1e-4, curve=circle(), exact=pr.u)).evaluate(np.array([0.1j]))


def test_criterion_1_star_manufactured(criterion):
    _warm_up()
    eps = 1e-8
    pr = random_gaussians(5, (0.05, 0.5), seed=0)
    t0 = time.perf_counter()
    sol = solve(ProblemSpec(pr.f, pr.g, eps=eps, p=16, curve=star(), exact=pr.u))
    P = random_interior_points(sol.boundary, 10_000, seed=1)
    err = float(np.nanmax(sol.errors(P)))
    elapsed = time.perf_counter() - t0
    criterion(1, err <= 1e-7 and elapsed <= 120.0 and np.isfinite(sol.errors(P)).all(),
              f"star 5 Gaussians eps=1e-8: max_err={err:.2e} (<=1e-7), time={elapsed:.1f}s (<=120s)")


def test_criterion_2_raindrop(criterion):
    eta, eps = 1e-3, 1e-10
    pr = cusp_gaussians(eta)
    sol = solve(ProblemSpec(pr.f, pr.g, eps=eps, curve=raindrop(eta), exact=pr.u))
    P = random_interior_points(sol.boundary, 10_000, seed=1)
    err = float(np.nanmax(sol.errors(P)))
    # extra probes clustered at the tip, where the error peaks
    Q = random_interior_points(sol.boundary, 400_000, seed=2)
    Q = Q[np.abs(Q) < 0.05][:3000]
    err_tip = float(np.nanmax(sol.errors(Q)))
    c = sol.counts()
    ok = max(err, err_tip) <= 5e-9 and 28 <= c["n_panels"] <= 112 and 2965 / 2 <= c["n_leaves"] <= 2 * 2965
    criterion(2, ok, f"raindrop eta=1e-3 eps=1e-10: max_err={err:.2e}, near tip {err_tip:.2e} (<=5e-9), "
                     f"panels={c['n_panels']} (28..112), leaves={c['n_leaves']} (1483..5930)")


def test_criterion_3_truncation_decay(criterion):
    parts, ok = [], True
    for curve in (circle(), raindrop(1e-3)):
        pan = adaptive_panelize(curve, 16, 1e-10)
        pan, strip, _ = build_strip(pan, eps=1e-10)
        passes = {}
        for crit in (True, False):
            tree = build_truncated_tree(smooth_source, strip, TreeConfig(eps=1e-10, strip_criterion=crit))
            rep = verify_geometric_decay(VolumePotentialEvaluator(tree, 1e-12), strip.inner, 40)
            passes[crit] = rep.passes(rho_min=1.6, floor=1e-12)
        good = bool(passes[True].all())
        if curve.name == "raindrop":
            ok &= good and bool((~passes[False]).any())
        else:
            ok &= good
        parts.append(f"{curve.name} {passes[True].sum()}/{passes[True].size} panels pass, "
                     f"control fails on {(~passes[False]).sum()}")
    criterion(3, ok, "; ".join(parts))


def test_criterion_4_jump_relations(criterion):
    worst = np.zeros(4)
    for name, kw in (("circle", {}), ("ellipse", {}), ("star", {}), ("raindrop", {"eta": 1e-3})):
        pan = resolve_density(adaptive_panelize(make_curve(name, **kw), 16, 1e-10))
        worst = np.maximum(worst, jump_errors(pan, smooth_density(pan), n_nodes=20))
    ok = worst[0] <= 1e-9 and worst[1] <= 1e-9 and worst[2] <= 1e-8 and worst[3] <= 1e-8
    criterion(4, ok, f"value jumps D={worst[0]:.1e} S={worst[1]:.1e} (<=1e-9), "
                     f"flux jumps S={worst[2]:.1e} D={worst[3]:.1e} (<=1e-8)")


def test_criterion_5_gauss_identity(criterion):
    worst = 0.0
    for curve in (circle(), star(), raindrop(1e-3)):
        pan = adaptive_panelize(curve, 16, 1e-10)
        one = np.ones(pan.z.shape)
        z = pan.z.ravel()
        c = z.mean()
        inside = np.concatenate([c + 0.5 * (z[::5] - c), z - 1e-4 * pan.normal.ravel()])
        outside = c + 3.0 * (z[::5] - c)
        nys = assemble_nystrom(pan)
        mu, _ = solve_bie(nys, np.full(nys.size, 2.5), 1e-13)
        worst = max(worst, np.abs(dlp_eval(pan, one, inside) + 1).max(),
                    np.abs(dlp_eval(pan, one, outside)).max(),
                    np.abs(dlp_on_curve(pan, one) + 0.5).max(),
                    nys.rowsum_defect(), np.abs(mu.values + 2.5).max() / 2.5)
    criterion(5, worst <= 1e-10, f"Gauss identity, row sums and constant-data density: worst={worst:.1e} (<=1e-10)")


def test_criterion_6_strip_solver(criterion):
    def annulus(n, p):
        return build_fictitious_curve(uniform_panelization(circle(), p, n), lambda t: 0.2 + 0 * np.asarray(t))

    u = lambda x, y: np.cos(2 * x) * np.exp(y) + x * y
    f = lambda x, y: -3 * np.cos(2 * x) * np.exp(y)
    diff = 0.0
    for n in (6, 8, 10, 12):
        elems, mk = build_strip_mesh(annulus(n, 10))
        s = assemble_strip_system(elems, mk, f=f, dirichlet=u)
        diff = max(diff, np.abs(s.solve() - s.solve_dense()).max())
    ue = lambda x, y: np.exp(x) * np.sin(y)
    errs = []
    for p in (4, 6, 8, 10, 12):
        elems, mk = build_strip_mesh(annulus(8, p))
        Z = np.stack([e.Z for e in elems])
        v = assemble_strip_system(elems, mk, 0.0, ue).solve()
        errs.append(np.abs(v - ue(Z.real, Z.imag)).max())
    ratios = [b / a for a, b in zip(errs[:-1], errs[1:]) if a > 1e-11]
    ok = diff <= 1e-10 and max(ratios) <= 0.5
    criterion(6, ok, f"Woodbury vs dense {diff:.1e} (<=1e-10); convergence ratios "
                     f"{', '.join(f'{r:.2g}' for r in ratios)} (<=0.5)")


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_criterion_7_volume_oracles(criterion):
    eps_q = 1e-11
    rng = np.random.default_rng(3)
    A = rng.standard_normal((6, 6)) / np.arange(1, 7)[:, None]
    f = lambda x, y: sum(A[i, j] * x ** j * y ** i for i in range(6) for j in range(6))
    tree = regular_tree(f, depth=1, p=16, refine=lambda x, y, h: x > 0.4 and y > 0.4, max_depth=2)
    z = np.array([0.1 + 0.2j, 0.7 + 0.61j, 1.05 + 0.3j, 0.3 - 1.0000001j, 2.5 + 0.1j])
    ex = np.array([_nquad_oracle(f, q) for q in z])
    small = np.abs(VolumePotentialEvaluator(tree, eps_q).eval_direct(z) - ex).max() / np.abs(ex).max()

    def cut(x, y, h):
        return np.hypot(abs(x) + h, abs(y) + h) > 1 and np.hypot(max(abs(x) - h, 0), max(abs(y) - h, 0)) < 1

    disk = regular_tree(lambda x, y: (x * x + y * y < 1).astype(float), half=1.0, depth=2, p=16,
                        max_depth=10, refine=cut)
    centre = VolumePotentialEvaluator(disk, eps_q).eval_direct(np.array([0j]))[0]
    ok = tree.n_leaves <= 10 and small <= eps_q and abs(centre + 0.25) <= eps_q
    criterion(7, ok, f"{tree.n_leaves}-leaf tree vs nquad rel={small:.1e}; unit disk centre "
                     f"{centre:.13f} err={abs(centre + 0.25):.1e} (<={eps_q:g})")


def test_criterion_8_eta_sweep(criterion):
    _warm_up()
    dofs, times = [], []
    for eta in (1e-1, 1e-2, 1e-3, 1e-4):
        pr = cusp_gaussians(eta)
        best = np.inf
        for _ in range(2):  # best of two damps scheduler noise on second-scale runs
            t0 = time.perf_counter()
            sol = solve(ProblemSpec(pr.f, pr.g, eps=1e-8, curve=raindrop(eta), exact=pr.u))
            best = min(best, time.perf_counter() - t0)
        times.append(best)
        dofs.append(sol.counts()["N"])
    gd = np.array(dofs[1:]) / np.array(dofs[:-1])
    gt = np.array(times[1:]) / np.array(times[:-1])
    ok = gd.max() <= 2.5 and gt.max() <= 2.5
    criterion(8, ok, f"N={dofs} growth<= {gd.max():.2f}, time={[round(t, 2) for t in times]}s "
                     f"growth<= {gt.max():.2f} (each <=2.5 per decade)")


def test_criterion_9_random_trees(criterion):
    bad = []
    for i in range(100):
        rng = np.random.default_rng(1000 + i)
        kind = rng.integers(3)
        if kind == 0:
            c = star(rng.uniform(0.5, 1.5), rng.uniform(0.05, 0.3), int(rng.integers(3, 8)))
        elif kind == 1:
            c = ellipse(1.0, rng.uniform(0.3, 1.0))
        else:
            c = raindrop(10 ** rng.uniform(-2, 0))
        eps = 10 ** rng.uniform(-8, -4)
        p = int(rng.choice([8, 12, 16]))
        pan, strip, _ = build_strip(adaptive_panelize(c, p, eps), eps=eps)
        z = pan.z.ravel()
        cen = z.mean()
        R = np.abs(z - cen).max()
        x0, y0 = cen.real + 0.5 * R * rng.uniform(-1, 1), cen.imag + 0.5 * R * rng.uniform(-1, 1)
        s = R * 10 ** rng.uniform(-2, -0.5)
        tree = build_truncated_tree(lambda x, y: np.exp(-((x - x0) ** 2 + (y - y0) ** 2) / (2 * s * s)),
                                    strip, TreeConfig(p=p, eps=eps))
        if balance_violations(tree) or strip_violations(tree).size:
            bad.append(i)
    criterion(9, not bad, f"100 random trees: 2:1 balance and strip leaf size violations in {len(bad)}")
