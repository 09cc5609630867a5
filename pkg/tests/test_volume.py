import numpy as np
import pytest
from scipy import integrate

from adaptpoisson.quadtree import INSIDE, TreeConfig, build_truncated_tree, regular_tree
from adaptpoisson.volume import VolumePotentialEvaluator, residual_on_leaf, verify_geometric_decay

from conftest import smooth_source

EPS_Q = 1e-11


def _Frect(x, y):
    # antiderivative of (1/2) log(x^2 + y^2) in both variables
    r2 = x * x + y * y
    with np.errstate(all="ignore"):
        a = np.where(x == 0, 0, x * x * np.arctan(y / np.where(x == 0, 1, x)))
        b = np.where(y == 0, 0, y * y * np.arctan(x / np.where(y == 0, 1, y)))
        lg = np.where(r2 == 0, 0, x * y * (np.log(np.where(r2 == 0, 1, r2)) - 3))
    return 0.5 * (lg + a + b)


def rect_potential(z, x0=-1.0, x1=1.0, y0=-1.0, y1=1.0):
    """-int Phi(z - y) dy over a rectangle for f = 1, in closed form."""
    X0, X1, Y0, Y1 = x0 - z.real, x1 - z.real, y0 - z.imag, y1 - z.imag
    return (_Frect(X1, Y1) - _Frect(X0, Y1) - _Frect(X1, Y0) + _Frect(X0, Y0)) / (2 * np.pi)


def test_centre_closed_form():
    assert abs(rect_potential(np.array([0j]))[0] - ((np.log(2) - 3) / np.pi + 0.5)) < 1e-15


@pytest.mark.parametrize("depth", [0, 2])
def test_constant_on_square_matches_closed_form(depth):
    tree = regular_tree(lambda x, y: 1.0 + 0 * x, depth=depth, p=16)
    ev = VolumePotentialEvaluator(tree, EPS_Q)
    rng = np.random.default_rng(0)
    z = np.concatenate([[0j, 0.5 + 0.5j, 1 + 1j, 1.0 + 0.3j, 0.999999 + 0.3j, 1.000001 + 0.3j, 3 + 3j,
                         0.25 + 0.25j, 0.2500001 + 0.1j],
                        rng.uniform(-1.5, 1.5, 30) + 1j * rng.uniform(-1.5, 1.5, 30)])
    ex = rect_potential(z)
    assert np.abs(ev.eval_direct(z) - ex).max() <= EPS_Q
    assert np.abs(ev.eval_fast(z) - ex).max() <= EPS_Q


def test_zero_source_gives_zero():
    tree = regular_tree(lambda x, y: 0 * x, depth=1, p=8)
    ev = VolumePotentialEvaluator(tree, EPS_Q)
    z = np.array([0.1 + 0.2j, 3.0 + 0j])
    assert np.all(ev.eval_direct(z) == 0) and np.all(ev.eval_fast(z) == 0)


def _nquad_oracle(f, z, x0=-1.0, x1=1.0, y0=-1.0, y1=1.0):
    xs, ys = [x0, x1], [y0, y1]
    if x0 < z.real < x1:
        xs = [x0, z.real, x1]
    if y0 < z.imag < y1:
        ys = [y0, z.imag, y1]
    tot = 0.0
    for a, b in zip(xs[:-1], xs[1:]):
        for c, d in zip(ys[:-1], ys[1:]):
            v, _ = integrate.nquad(lambda y, x: f(x, y) * 0.5 * np.log((x - z.real) ** 2 + (y - z.imag) ** 2),
                                   [[c, d], [a, b]], opts={"epsabs": 1e-15, "epsrel": 1e-13, "limit": 200})
            tot += v
    return tot / (2 * np.pi)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_small_tree_matches_adaptive_quadrature():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((6, 6)) / np.arange(1, 7)[:, None]
    f = lambda x, y: sum(A[i, j] * x ** j * y ** i for i in range(6) for j in range(6))
    tree = regular_tree(f, depth=1, p=16, refine=lambda x, y, h: x > 0.4 and y > 0.4, max_depth=2)
    assert tree.n_leaves <= 10
    ev = VolumePotentialEvaluator(tree, EPS_Q)
    z = np.array([0.1 + 0.2j, 0.7 + 0.61j, 1.05 + 0.3j, 0.3 - 1.0000001j, 2.5 + 0.1j, -0.999 + 0.999j])
    ex = np.array([_nquad_oracle(f, q) for q in z])
    scale = np.abs(ex).max()
    assert np.abs(ev.eval_direct(z) - ex).max() <= EPS_Q * scale
    assert np.abs(ev.eval_fast(z) - ex).max() <= EPS_Q * scale


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_far_target_single_box_polynomial():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((4, 4))
    f = lambda x, y: sum(A[i, j] * x ** j * y ** i for i in range(4) for j in range(4))
    ev = VolumePotentialEvaluator(regular_tree(f, depth=0, p=8), EPS_Q)
    z = np.array([4.0 + 1.0j])
    assert abs(ev.eval_direct(z)[0] - _nquad_oracle(f, z[0])) < 1e-12


def test_fast_matches_direct_and_gradient(raindrop_strip):
    _, strip = raindrop_strip
    tree = build_truncated_tree(smooth_source, strip, TreeConfig(eps=1e-8))
    ev = VolumePotentialEvaluator(tree, EPS_Q)
    rng = np.random.default_rng(2)
    z = rng.uniform(-0.3, 0.3, 300) + 1j * rng.uniform(-1.0, 0.0, 300)
    vd, gd = ev.value_and_gradient(z, fast=False)
    vf, gf = ev.value_and_gradient(z, fast=True)
    assert np.abs(vd - vf).max() <= 3 * EPS_Q
    assert np.abs(gd - gf).max() <= 1e-9
    e = 1e-6
    zz = z[:20]
    fd = (ev(zz + e) - ev(zz - e)) / (2 * e) + 1j * (ev(zz + 1j * e) - ev(zz - 1j * e)) / (2 * e)
    assert np.abs(gf[:20] - fd).max() < 1e-7


def test_mean_value_outside_support():
    tree = regular_tree(lambda x, y: np.exp(x) * np.cos(2 * y), depth=1, p=12)
    ev = VolumePotentialEvaluator(tree, EPS_Q)
    c, r = 2.6 + 0.4j, 0.5
    n = 64
    ring = c + r * np.exp(2j * np.pi * np.arange(n) / n)
    assert abs(ev(np.array([c]))[0] - ev(ring).mean()) <= EPS_Q


def test_translation_invariance():
    f = lambda x, y: np.cos(x + 2 * y)
    shift = 0.75 - 0.5j
    ev0 = VolumePotentialEvaluator(regular_tree(f, depth=1, p=12), EPS_Q)
    ev1 = VolumePotentialEvaluator(regular_tree(lambda x, y: f(x - shift.real, y - shift.imag),
                                                center=(shift.real, shift.imag), depth=1, p=12), EPS_Q)
    z = np.array([0.1 + 0.3j, 1.7 - 0.2j, -0.9 + 0.95j])
    v0 = ev0(z)
    assert np.abs(ev1(z + shift) - v0).max() <= 1e-12 * np.abs(v0).max()


def test_residual_small_in_bulk_and_refused_in_strip(circle_strip):
    _, strip = circle_strip
    eps = 1e-10
    tree = build_truncated_tree(smooth_source, strip, TreeConfig(eps=eps))
    ev = VolumePotentialEvaluator(tree, 0.1 * eps)
    lv = tree.leaves
    bulk = lv[(tree.tag_gamma[lv] == INSIDE) & (tree.tag_fict[lv] == INSIDE)]
    assert max(residual_on_leaf(ev, b) for b in bulk[:8]) <= 1e3 * eps
    strip_leaf = lv[tree.touches_strip()[lv] & (tree.tag_gamma[lv] == INSIDE)][0]
    with pytest.raises(ValueError):
        residual_on_leaf(ev, strip_leaf)


def test_residual_zero_source(circle_strip):
    _, strip = circle_strip
    tree = build_truncated_tree(lambda x, y: 0 * x, strip, TreeConfig(eps=1e-10, vscale=1.0))
    ev = VolumePotentialEvaluator(tree, EPS_Q)
    lv = tree.leaves
    b = lv[(tree.tag_gamma[lv] == INSIDE) & (tree.tag_fict[lv] == INSIDE)][0]
    assert residual_on_leaf(ev, b) == 0.0


def test_truncation_artifact_without_strip_criterion(circle_strip):
    _, strip = circle_strip
    med = {}
    for crit in (True, False):
        tree = build_truncated_tree(smooth_source, strip, TreeConfig(eps=1e-10, strip_criterion=crit))
        ev = VolumePotentialEvaluator(tree, 1e-12)
        lv = tree.leaves
        near = lv[tree.touches_strip()[lv] & (tree.tag_gamma[lv] == INSIDE)]
        med[crit] = np.median([residual_on_leaf(ev, b, allow_strip=True) for b in near[:60]])
    assert med[False] > 1e3 * med[True]


def test_decay_zero_source(circle_strip):
    _, strip = circle_strip
    tree = build_truncated_tree(lambda x, y: 0 * x, strip, TreeConfig(eps=1e-10, vscale=1.0))
    rep = verify_geometric_decay(VolumePotentialEvaluator(tree, EPS_Q), strip.inner, 20)
    assert rep.passes().all()
