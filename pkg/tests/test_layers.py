import numpy as np
import pytest
from scipy import integrate

from adaptpoisson.geometry import adaptive_panelize, circle, make_curve
from adaptpoisson.layers import (CloseEvalPolicy, LayerDensity, close_eval_panel, compute_jumps, dlp_eval,
                                 dlp_grad, dlp_on_curve, slp_eval, slp_grad, v_glue_eval)

from conftest import jump_errors, resolve_density, smooth_density

_INV2PI = 1 / (2 * np.pi)


def panel_oracle(pan, k, dens_k, z0, layer):
    """scipy adaptive quadrature over the panel parameter, breakpoint at the nearest node."""
    kit = pan.kit
    xk, dk = pan.z[k], pan.dz[k]

    def integrand(s):
        row = kit.interp(np.array([s]))[0]
        x, dx, f = row @ xk, row @ dk, row @ dens_k
        r = x - z0
        if layer == "single":
            return -_INV2PI * np.log(abs(r)) * f * abs(dx)
        return -_INV2PI * np.imag(dx / r) * f

    s0 = kit.t[int(np.argmin(np.abs(xk - z0)))]
    v, _ = integrate.quad(integrand, -1, 1, points=[s0], limit=400, epsabs=1e-15, epsrel=1e-14)
    return v


def test_slp_constant_density_circles():
    for r, expect in ((1.0, 0.0), (2.0, -2 * np.log(2))):
        pan = adaptive_panelize(circle(r), 16, 1e-12)
        assert abs(slp_eval(pan, np.ones(pan.z.shape), np.array([0j]))[0] - expect) < 1e-12


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("layer", ["single", "double"])
@pytest.mark.parametrize("rel", [1e-4, 1e-3])
def test_close_panel_matches_oracle(star_pan, layer, rel):
    pan = star_pan
    k = 5
    dens = smooth_density(pan)[k]
    mid = pan.z[k, pan.kit.n // 2]
    for side in (1, -1):
        z0 = mid + side * rel * pan.length[k] * pan.normal[k, pan.kit.n // 2]
        got = close_eval_panel(pan, k, dens, layer, np.array([z0]))[0]
        assert abs(got - panel_oracle(pan, k, dens, z0, layer)) < 1e-10


def test_close_matches_plain_rule_far_away(star_pan):
    pan = star_pan
    k = 7
    dens = smooth_density(pan)[k]
    mid = pan.z[k, pan.kit.n // 2]
    nrm = pan.normal[k, pan.kit.n // 2]
    kit = pan.kit
    for dist in (1.3, 1.6, 2.0):
        z0 = mid - dist * pan.length[k] * nrm
        r = pan.z[k] - z0
        plain_s = -_INV2PI * np.sum(kit.W * np.abs(pan.dz[k]) * dens * np.log(np.abs(r)))
        plain_d = -_INV2PI * np.sum(kit.W * dens * np.imag(pan.dz[k] / r))
        cs = close_eval_panel(pan, k, dens, "single", np.array([z0]))[0]
        cd = close_eval_panel(pan, k, dens, "double", np.array([z0]))[0]
        tol = 1e-12 if dist >= 2.0 else 1e-11
        assert abs(cs - plain_s) <= tol * max(1.0, abs(plain_s))
        assert abs(cd - plain_d) <= tol * max(1.0, abs(plain_d))


@pytest.mark.parametrize("fixture", ["circle_pan", "star_pan", "raindrop_pan"])
def test_gauss_identity(request, fixture):
    pan = request.getfixturevalue(fixture)
    one = np.ones(pan.z.shape)
    z = pan.z.ravel()
    c = z.mean()
    inside = c + 0.5 * (z[::5] - c)
    outside = c + 3.0 * (z[::5] - c)
    assert np.abs(dlp_eval(pan, one, inside) + 1).max() < 1e-10
    assert np.abs(dlp_eval(pan, one, outside)).max() < 1e-10
    assert np.abs(dlp_on_curve(pan, one) + 0.5).max() < 1e-10
    assert np.abs(dlp_eval(pan, one, z) + 0.5).max() < 1e-10
    # near-curve interior targets
    near = z - 1e-4 * pan.normal.ravel()
    assert np.abs(dlp_eval(pan, one, near) + 1).max() < 1e-10


def test_gauss_identity_circle_near_curve(circle_pan):
    pan = circle_pan
    z = pan.z.ravel()
    assert np.abs(dlp_eval(pan, np.ones(pan.z.shape), 0.9999 * z) + 1).max() < 1e-11


def test_on_curve_dlp_consistency(raindrop_pan):
    pan = resolve_density(raindrop_pan)
    tau = smooth_density(pan)
    assert np.abs(dlp_eval(pan, tau, pan.z.ravel()) - dlp_on_curve(pan, tau)).max() < 1e-10


@pytest.mark.parametrize("name,kw", [("circle", {}), ("ellipse", {}), ("star", {}), ("raindrop", {"eta": 1e-3})])
def test_jump_relations(name, kw):
    pan = resolve_density(adaptive_panelize(make_curve(name, **kw), 16, 1e-10))
    e_dv, e_sv, e_sf, e_df = jump_errors(pan, smooth_density(pan))
    assert e_dv <= 1e-9 and e_sv <= 1e-9
    assert e_sf <= 1e-8 and e_df <= 1e-8


def test_gradients_match_finite_differences(star_pan):
    pan = star_pan
    tau = smooth_density(pan)
    z = (pan.z - 0.01 * pan.length[:, None] * pan.normal).ravel()[::13]
    e = 1e-6
    for val, grad in ((slp_eval, slp_grad), (dlp_eval, dlp_grad)):
        g = grad(pan, tau, z)
        fd = (val(pan, tau, z + e) - val(pan, tau, z - e)) / (2 * e) \
            + 1j * (val(pan, tau, z + 1j * e) - val(pan, tau, z - 1j * e)) / (2 * e)
        assert np.abs(g - fd).max() <= 1e-6 * np.abs(g).max()


def test_glue_is_harmonic(raindrop_strip):
    from adaptpoisson.quadtree import CurveShape
    _, strip = raindrop_strip
    inner = strip.inner
    tau = LayerDensity(smooth_density(inner), "double")
    sig = LayerDensity(np.sin(inner.z.real * 4), "single")
    rng = np.random.default_rng(0)
    z = rng.uniform(-0.3, 0.3, 4000) + 1j * rng.uniform(-1, 0, 4000)
    dist = np.abs(z[:, None] - inner.z.ravel()[None, :]).min(axis=1)
    z = z[CurveShape(inner).contains(z.real, z.imag) & (dist > 0.05)][:20]
    h = 2e-3
    # fourth-order five-point stencils in x and y
    offs = np.array([-2, -1, 0, 1, 2])
    w = np.array([-1, 16, -30, 16, -1]) / (12 * h * h)
    pts = np.concatenate([z[:, None] + h * offs[None, :], z[:, None] + 1j * h * offs[None, :]], axis=1)
    v = v_glue_eval(tau, sig, inner, pts.ravel()).reshape(z.size, 10)
    lap = v[:, :5] @ w + v[:, 5:] @ w
    assert np.abs(lap).max() <= 1e-6 * np.abs(v).max()


def test_compute_jumps_trivial(circle_strip):
    _, strip = circle_strip
    n = strip.inner.normal
    zero = np.zeros(n.shape)
    tau, sig = compute_jumps(zero, zero, zero, zero.astype(complex), n)
    assert not tau.values.any() and not sig.values.any()
    assert np.all(v_glue_eval(tau, sig, strip.inner, np.array([0.1j, 0.3])) == 0)
    bv = smooth_density(strip.inner)
    bg = np.exp(1j * np.angle(strip.inner.z))
    tau, sig = compute_jumps(zero, zero, bv, bg, n)
    assert np.array_equal(tau.values, bv)
    assert np.allclose(sig.values, (bg * np.conj(n)).real, atol=1e-15)


def test_density_validation(circle_pan):
    with pytest.raises(ValueError):
        LayerDensity(np.ones((2, 3)), "triple")
    with pytest.raises(ValueError):
        LayerDensity(np.array([[np.nan]]), "single")
    with pytest.raises(ValueError):
        CloseEvalPolicy(multiplier=0.5)
