import numpy as np
import pytest

from adaptpoisson.geometry import adaptive_panelize, circle, raindrop, star
from adaptpoisson.strip_geometry import build_strip


@pytest.fixture(scope="session")
def circle_pan():
    return adaptive_panelize(circle(), 16, 1e-10)


@pytest.fixture(scope="session")
def star_pan():
    return adaptive_panelize(star(), 16, 1e-8)


@pytest.fixture(scope="session")
def raindrop_pan():
    return adaptive_panelize(raindrop(1e-3), 16, 1e-10)


@pytest.fixture(scope="session")
def circle_strip(circle_pan):
    pan, strip, _ = build_strip(circle_pan, eps=1e-10)
    return pan, strip


@pytest.fixture(scope="session")
def raindrop_strip(raindrop_pan):
    pan, strip, _ = build_strip(raindrop_pan, eps=1e-10)
    return pan, strip


def smooth_source(x, y):
    return np.exp(-((x - 0.2) ** 2 + (y - 0.1) ** 2) / (2 * 0.3 ** 2)) + 2 * x * np.cos(3 * np.pi * y)


def jump_errors(pan, dens, n_nodes=20, rel_offset=1e-6, seed=1):
    """Errors in the four jump identities at random nodes.

    Two-sided offsets d and 2d along the normal; the O(d) term of each jump is
    removed by Richardson extrapolation 2 J(d) - J(2d).
    Returns (D value, S value, S flux, D flux) maximum errors.
    """
    from adaptpoisson.layers import dlp_eval, dlp_grad, slp_eval, slp_grad

    rng = np.random.default_rng(seed)
    idx = rng.choice(pan.n_nodes, n_nodes, replace=False)
    z = pan.z.ravel()[idx]
    n = pan.normal.ravel()[idx]
    L = np.repeat(pan.length, pan.kit.n)[idx]
    t = np.asarray(dens).ravel()[idx]

    def jump(fun, d):
        return fun(z + d * L * n) - fun(z - d * L * n)

    def extrap(fun):
        return 2 * jump(fun, rel_offset) - jump(fun, 2 * rel_offset)

    def dn(fun):
        return lambda q: (lambda g: g.real * n.real + g.imag * n.imag)(fun(q))

    e_dv = np.abs(extrap(lambda q: dlp_eval(pan, dens, q)) - t).max()
    e_sv = np.abs(extrap(lambda q: slp_eval(pan, dens, q))).max()
    e_sf = np.abs(extrap(dn(lambda q: slp_grad(pan, dens, q))) + t).max()
    e_df = np.abs(extrap(dn(lambda q: dlp_grad(pan, dens, q)))).max()
    return e_dv, e_sv, e_sf, e_df


def density_fun(z):
    return np.cos(3 * np.angle(z)) + 0.3 * z.real ** 2


def smooth_density(pan):
    return density_fun(pan.z)


def resolve_density(pan, fun=density_fun, eps=1e-13, max_rounds=10):
    """Bisect panels until ``fun`` sampled on them passes the Legendre tail test.

    The hypersingular flux identity sees junction mismatches of the panel
    interpolants amplified by 1/distance, so test densities must be resolved.
    """
    from adaptpoisson.geometry import enforce_panel_rules
    from adaptpoisson.spectral import resolution_check

    kit = pan.kit
    E = kit.interp(kit.fine_t)
    for _ in range(max_rounds):
        bad = [k for k in range(pan.n_panel) if not resolution_check(fun(E @ pan.z[k]), kit, eps)]
        if not bad:
            return pan
        pan = enforce_panel_rules(pan.bisect(bad))
    raise RuntimeError("density not resolved")


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """record(k, ok, detail) stores one acceptance line and asserts ok."""
    def record(k, ok, detail):
        _ACCEPTANCE[k] = (bool(ok), detail)
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}")
