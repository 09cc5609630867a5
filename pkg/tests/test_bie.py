import numpy as np
import pytest

from adaptpoisson.bie import (BIEConvergenceError, OutsideDomainError, assemble_nystrom, eval_homogeneous,
                              gmres, solve_bie)
from adaptpoisson.geometry import Panelization, adaptive_panelize, circle, star
from adaptpoisson.layers import dlp_eval, dlp_on_curve


def harmonic(z):
    return (z ** 2).real + np.exp(z.real) * np.cos(z.imag)


@pytest.fixture(scope="module")
def circle_sys(circle_pan):
    return assemble_nystrom(circle_pan)


@pytest.fixture(scope="module")
def star_sys():
    return assemble_nystrom(adaptive_panelize(star(), 16, 1e-10))


def test_operator_on_constant(circle_sys, star_sys):
    assert np.abs(circle_sys.apply(np.ones(circle_sys.size)) + 1).max() < 1e-12
    for s in (circle_sys, star_sys):
        assert s.rowsum_defect() < 1e-10


def test_circle_fourier_mode(circle_sys):
    # the unit-circle kernel is the constant -1/(4 pi), so D annihilates cos(theta)
    z = circle_sys.pan.z.ravel()
    c = np.cos(np.angle(z))
    assert np.abs(circle_sys.apply(c) + 0.5 * c).max() < 1e-10


def test_refinement_leaves_action_unchanged():
    pan = adaptive_panelize(star(), 16, 1e-10)
    fine = pan.bisect(range(pan.n_panel))
    tau = lambda z: np.cos(2 * np.angle(z)) + z.imag
    coarse_at_fine = dlp_eval(pan, tau(pan.z), fine.z.ravel())
    assert np.abs(coarse_at_fine - dlp_on_curve(fine, tau(fine.z))).max() < 1e-10


def test_constant_data_gives_minus_constant(star_sys):
    mu, res = solve_bie(star_sys, np.full(star_sys.size, 2.5), 1e-13)
    assert np.abs(mu.values + 2.5).max() < 1e-11
    mu0, res0 = solve_bie(star_sys, np.zeros(star_sys.size))
    assert not mu0.values.any() and res0.iterations == 0


def test_iterations_independent_of_refinement():
    its = []
    for n in (0, 1):
        pan = adaptive_panelize(star(), 16, 1e-10)
        if n:
            pan = pan.bisect(range(pan.n_panel))
        s = assemble_nystrom(pan)
        _, res = solve_bie(s, harmonic(pan.z.ravel()), 1e-12)
        its.append(res.iterations)
    assert max(its) <= 30
    assert abs(its[0] - its[1]) <= 3


def test_interior_harmonic_extension(circle_pan, circle_sys):
    pan = circle_pan
    g = lambda z: (z ** 2).real
    mu, _ = solve_bie(circle_sys, g(pan.z.ravel()), 1e-13)
    r = np.sqrt(np.linspace(0, 0.95, 9))
    th = np.linspace(0, 2 * np.pi, 13)
    z = (r[:, None] * np.exp(1j * th[None, :])).ravel()
    assert np.abs(eval_homogeneous(pan, mu, z) - g(z)).max() < 1e-10
    one, _ = solve_bie(circle_sys, np.ones(circle_sys.size), 1e-13)
    assert np.abs(eval_homogeneous(pan, one, z) - 1).max() < 1e-12


def test_close_to_boundary(star_sys):
    pan = star_sys.pan
    mu, _ = solve_bie(star_sys, harmonic(pan.z.ravel()), 1e-13)
    for d in (1e-5, 1e-3):
        q = (pan.z - d * pan.normal).ravel()[::3]
        assert np.abs(eval_homogeneous(pan, mu, q) - harmonic(q)).max() < 1e-8


def test_outside_targets_refused(circle_pan, circle_sys):
    mu, _ = solve_bie(circle_sys, np.ones(circle_sys.size))
    with pytest.raises(OutsideDomainError) as info:
        eval_homogeneous(circle_pan, mu, np.array([0.1, 2.0 + 0j]))
    assert info.value.mask.tolist() == [False, True]


def test_maximum_principle(star_sys):
    pan = star_sys.pan
    g = harmonic(pan.z.ravel())
    mu, _ = solve_bie(star_sys, g, 1e-13)
    rng = np.random.default_rng(4)
    z = 0.7 * np.sqrt(rng.uniform(size=300)) * np.exp(2j * np.pi * rng.uniform(size=300))
    w = eval_homogeneous(pan, mu, z)
    assert w.min() >= g.min() - 1e-9 and w.max() <= g.max() + 1e-9


def test_doubling_panels_changes_little():
    pan = adaptive_panelize(star(), 16, 1e-10)
    z = np.array([0.1 + 0.2j, -0.5 + 0.1j, 0.3 - 0.6j])
    out = []
    for p in (pan, pan.bisect(range(pan.n_panel))):
        mu, _ = solve_bie(assemble_nystrom(p), harmonic(p.z.ravel()), 1e-13)
        out.append(eval_homogeneous(p, mu, z))
    assert np.abs(out[0] - out[1]).max() <= 1e-10


def test_panel_order_permutation(star_sys):
    pan = star_sys.pan
    rolled = Panelization(pan.kit, np.roll(pan.z, 5, axis=0))
    z = np.array([0.1 + 0.2j, -0.5 + 0.1j])
    w = []
    for p in (pan, rolled):
        mu, _ = solve_bie(assemble_nystrom(p), harmonic(p.z.ravel()), 1e-14)
        w.append(eval_homogeneous(p, mu, z))
    assert np.abs(w[0] - w[1]).max() <= 1e-12


def test_gmres_against_dense_and_stagnation():
    rng = np.random.default_rng(0)
    A = np.eye(40) + 0.1 * rng.standard_normal((40, 40))
    b = rng.standard_normal(40)
    res = gmres(lambda x: A @ x, b, tol=1e-13)
    assert res.converged
    assert np.abs(res.x - np.linalg.solve(A, b)).max() < 1e-11
    pan = adaptive_panelize(circle(), 16, 1e-10)
    s = assemble_nystrom(pan)
    with pytest.raises(BIEConvergenceError) as info:
        solve_bie(s, harmonic(pan.z.ravel()) + rng.standard_normal(s.size), tol=1e-15, max_iter=2)
    assert len(info.value.history) == 3
