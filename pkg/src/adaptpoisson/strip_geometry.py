"""Variable-width strip along the boundary.

The width function h(t) follows local panel size: a piecewise-linear
interpolant of averaged sizes, softplus-rounded at every panel junction,
combined over a few neighbours and blended with a partition of unity.  The
fictitious curve is the inward normal offset x - h(t) n.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Panelization, dense_polyline, signed_area
from .spectral import SpectralKit, resolution_check


class StripGeometryError(RuntimeError):
    """Invalid strip; ``panels`` lists the boundary panels to refine."""

    def __init__(self, msg: str, panels=()):
        super().__init__(msg)
        self.panels = np.unique(np.asarray(panels, dtype=int))


def softplus(t, beta: float):
    """(1/beta) log(1 + exp(beta t)), overflow safe."""
    if np.any(np.asarray(beta) <= 0):
        raise ValueError("beta must be positive")
    bt = np.asarray(beta * np.asarray(t, dtype=float))
    out = np.maximum(bt, 0.0) + np.log1p(np.exp(-np.abs(bt)))
    out = out / beta
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class WidthFunctionConfig:
    K: int = 2              # neighbour radius for size averaging and kink sums
    pu_width: float = 0.7   # Gaussian blend width, in panel-index units
    scale: float = 1.0      # h is multiplied by this
    degree: int = 30        # per-interval Legendre representation of H

    def __post_init__(self):
        if not 1 <= self.K <= 5:
            raise ValueError("K must be in 1..5")
        if self.pu_width <= 0 or self.scale <= 0:
            raise ValueError("pu_width and scale must be positive")


def _softplus_unit(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def index_width(abar: np.ndarray, tau, K: int = 2, pu_width: float = 0.7) -> np.ndarray:
    """Rounded, blended size interpolant H(tau) in the panel-index variable.

    Knots sit at the integers with values ``abar`` (periodic).  Every index
    interval has unit length, so the rounding scale is 1 and the blend uses
    Gaussian weights of width ``pu_width``.
    """
    n = abar.size
    tau = np.asarray(tau, dtype=float)
    base = np.floor(tau).astype(int)
    slope = np.roll(abar, -1) - abar
    R = int(np.ceil(9.0 * pu_width))

    def lin(i, x):       # x = tau - i
        return abar[i % n] + slope[i % n] * x

    def rnd(i, x):
        return abar[i % n] + slope[(i - 1) % n] * x + (slope[i % n] - slope[(i - 1) % n]) * _softplus_unit(x)

    offs = range(-R - K, R + K + 2)
    corr = {o: rnd(base + o, tau - base - o) - lin(base + o, tau - base - o) for o in offs}
    num = np.zeros_like(tau)
    den = np.zeros_like(tau)
    for o in range(-R, R + 1):
        j = base + o
        x = tau - j
        w = np.exp(-0.5 * (x / pu_width) ** 2)
        hn = rnd(j + K + 1, tau - j - K - 1)
        for q in range(o - K, o + K + 1):
            hn = hn + corr[q]
        num += w * hn
        den += w
    return num / den


def _pu_basis(tau: np.ndarray, width: float, R: int):
    """Gaussian partition of unity centred at half-integers.

    Returns (offsets, weights) with weights[..., o] belonging to centre
    floor(tau) + offsets[o] + 1/2.
    """
    base = np.floor(tau)
    offs = np.arange(-R, R + 1)
    G = np.exp(-0.5 * ((tau[..., None] - base[..., None] - offs - 0.5) / width) ** 2)
    return offs, G / G.sum(axis=-1, keepdims=True)


@dataclass
class WidthFunction:
    """h(t) on the periodic arc-length interval [0, L).

    A smooth increasing chart t(tau) sends the unit index interval [k, k+1]
    exactly onto panel k.  Its speed dt/dtau = exp(Lambda(tau)) is a smooth
    positive blend fitted so each interval integrates to its panel length;
    h(t) = scale * H(tau(t)) with H from ``index_width``.
    """

    a: np.ndarray        # raw panel arc lengths
    abar: np.ndarray     # averaged sizes at the panel start points
    A: np.ndarray        # panel start offsets
    L: float
    cfg: WidthFunctionConfig
    coef: np.ndarray = field(init=False, repr=False)    # Legendre coeffs of H on [m, m+1]
    scoef: np.ndarray = field(init=False, repr=False)   # coeffs of dt/dtau
    icoef: np.ndarray = field(init=False, repr=False)   # coeffs of int_m^tau dt/dtau
    newton_steps: int = field(init=False)

    def __post_init__(self):
        n = self.a.size
        deg = self.cfg.degree
        x, w = np.polynomial.legendre.leggauss(deg + 1)
        tau = np.arange(n)[:, None] + 0.5 * (x[None, :] + 1.0)
        H = index_width(self.abar, tau, self.cfg.K, self.cfg.pu_width)
        if np.any(H <= 0):
            raise ValueError("width interpolant is not positive")
        V = np.polynomial.legendre.legvander(x, deg)
        analysis = (V * w[:, None]).T * ((2 * np.arange(deg + 1) + 1) / 2.0)[:, None]
        self.coef = H @ analysis.T
        speed = self._fit_chart(tau, w)
        self.scoef = speed @ analysis.T
        self.icoef = 0.5 * np.array([np.polynomial.legendre.legint(c, lbnd=-1.0) for c in self.scoef])

    def _fit_chart(self, tau, w):
        """Newton solve for Lambda so that int_k^{k+1} exp(Lambda) = a_k."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.linalg import spsolve

        n = self.a.size
        R = int(np.ceil(9.0 * self.cfg.pu_width)) + 1
        offs, Phi = _pu_basis(tau, self.cfg.pu_width, R)        # (n, q, 2R+1)
        cols = (np.arange(n)[:, None] + offs[None, :]) % n      # (n, 2R+1)
        rows = np.repeat(np.arange(n), offs.size)
        lam = np.log(self.a).copy()
        for it in range(60):
            Lam = np.einsum("mqo,mo->mq", Phi, lam[cols])
            E = np.exp(Lam)
            F = 0.5 * E @ w - self.a
            if np.max(np.abs(F) / self.a) < 1e-14:
                break
            Jv = 0.5 * np.einsum("mq,mqo,q->mo", E, Phi, w)
            J = coo_matrix((Jv.ravel(), (rows, cols.ravel())), shape=(n, n)).tocsc()
            step = spsolve(J, -F)
            # damp so the speed never changes by more than a factor e per step
            lam += step / max(1.0, np.max(np.abs(step)))
        else:
            raise RuntimeError("arc-length chart fit did not converge")
        self.newton_steps = it
        return E

    @property
    def n_panel(self) -> int:
        return self.a.size

    @staticmethod
    def _split(tau, n):
        m = np.floor(tau).astype(int)
        s = 2.0 * (tau - m) - 1.0
        return m % n, s

    def H(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        m, s = self._split(tau.ravel(), self.n_panel)
        V = np.polynomial.legendre.legvander(s, self.cfg.degree)
        return np.einsum("ij,ij->i", V, self.coef[m]).reshape(tau.shape)

    def tau_of_t(self, t) -> np.ndarray:
        """Continuous panel index of arc-length position t (periodic)."""
        t = np.asarray(t, dtype=float)
        n = self.n_panel
        wraps = np.floor(t / self.L)
        tt = t - wraps * self.L
        m = np.clip(np.searchsorted(self.A, tt, side="right") - 1, 0, n - 1)
        du = tt - self.A[m]
        s = 2.0 * du / self.a[m] - 1.0
        ic, sc = self.icoef[m], self.scoef[m]
        for _ in range(50):
            V = np.polynomial.legendre.legvander(s, self.cfg.degree + 1)
            F = np.einsum("ij,ij->i", V, ic) - du
            dF = 0.5 * np.einsum("ij,ij->i", V[:, :-1], sc)
            step = F / dF
            s = np.clip(s - step, -1.0, 1.0)
            if np.max(np.abs(step), initial=0.0) < 1e-15:
                break
        return wraps * n + m + 0.5 * (s + 1.0)

    def __call__(self, t) -> np.ndarray:
        scalar = np.ndim(t) == 0
        tau = self.tau_of_t(np.atleast_1d(t))
        out = self.cfg.scale * self.H(tau)
        return float(out[0]) if scalar else out

    def derivative(self, t) -> np.ndarray:
        """dh/dt."""
        tau = self.tau_of_t(np.atleast_1d(np.asarray(t, dtype=float)))
        m, s = self._split(tau, self.n_panel)
        dH = np.array([np.polynomial.legendre.legval(si, 2.0 * np.polynomial.legendre.legder(self.coef[mi]))
                       for mi, si in zip(m, s)])
        sp = np.einsum("ij,ij->i", np.polynomial.legendre.legvander(s, self.cfg.degree), self.scoef[m])
        return self.cfg.scale * dH / sp

    def linear(self, t) -> np.ndarray:
        """Piecewise-linear interpolant of the averaged sizes (the starting point)."""
        tau = self.tau_of_t(np.atleast_1d(t))
        m, s = self._split(tau, self.n_panel)
        x = 0.5 * (s + 1.0)
        return self.abar[m] + (self.abar[(m + 1) % self.n_panel] - self.abar[m]) * x

    def pu_weights(self, tau) -> np.ndarray:
        """Normalized blend weights at tau (last axis: stencil members)."""
        tau = np.asarray(tau, dtype=float)
        R = int(np.ceil(9.0 * self.cfg.pu_width))
        base = np.floor(tau)
        offs = np.arange(-R, R + 1)
        W = np.exp(-0.5 * ((tau[..., None] - base[..., None] - offs) / self.cfg.pu_width) ** 2)
        return W / W.sum(axis=-1, keepdims=True)

    def at_nodes(self, pan: Panelization) -> np.ndarray:
        return self(pan.node_params().ravel()).reshape(pan.z.shape)


def build_width_function(pan: Panelization,
                         cfg: WidthFunctionConfig | None = None) -> WidthFunction:
    cfg = cfg or WidthFunctionConfig()
    a = np.asarray(pan.length, dtype=float)
    if np.any(a <= 0):
        raise ValueError("panel arc lengths must be positive")
    n = a.size
    K = cfg.K
    # mean of the 2K panels centred on each start point A_k: k-K .. k+K-1
    idx = (np.arange(n)[:, None] + np.arange(-K, K)[None, :]) % n
    abar = a[idx].mean(axis=1)
    return WidthFunction(a, abar, np.asarray(pan.offsets, dtype=float), float(pan.perimeter), cfg)


# ---------------------------------------------------------------------------
# fictitious curve
# ---------------------------------------------------------------------------

@dataclass
class StripRegion:
    outer: Panelization          # Gamma
    inner: Panelization          # fictitious curve, node-matched
    h: object                    # WidthFunction or any callable of arc length
    h_nodes: np.ndarray          # h at the outer nodes (n_panel, p+1)

    @property
    def n_panel(self) -> int:
        return self.outer.n_panel

    @property
    def widths(self) -> np.ndarray:
        """Local strip width at each node pair."""
        return np.abs(self.outer.z - self.inner.z)

    @property
    def mid_widths(self) -> np.ndarray:
        m = self.outer.kit.n // 2
        return self.widths[:, m]


def _segments_cross(p1, p2, q1, q2):
    def orient(a, b, c):
        return np.sign((b.real - a.real) * (c.imag - a.imag) - (b.imag - a.imag) * (c.real - a.real))
    return (orient(p1, p2, q1) * orient(p1, p2, q2) < 0) & (orient(q1, q2, p1) * orient(q1, q2, p2) < 0)


def self_intersections(pan: Panelization, factor: int = 4) -> list[tuple[int, int]]:
    """Pairs of panels whose dense polylines cross."""
    poly = dense_polyline(pan, factor)
    z = poly[:, 0] + 1j * poly[:, 1]
    m = z.size
    per = factor * pan.kit.n
    owner = np.arange(m) // per
    z2 = np.roll(z, -1)
    seglen = np.abs(z2 - z)
    mid = 0.5 * (z + z2)
    tree = cKDTree(np.column_stack([mid.real, mid.imag]))
    pairs = tree.query_pairs(seglen.max() * 1.01, output_type="ndarray")
    if pairs.size == 0:
        return []
    i, j = pairs[:, 0], pairs[:, 1]
    far = np.minimum(np.abs(i - j), m - np.abs(i - j)) > 1
    i, j = i[far], j[far]
    hit = _segments_cross(z[i], z2[i], z[j], z2[j])
    out = {(int(min(owner[a], owner[b])), int(max(owner[a], owner[b]))) for a, b in zip(i[hit], j[hit])}
    return sorted(out)


def build_fictitious_curve(pan: Panelization, h,
                           kit: SpectralKit | None = None,
                           max_hk: float = 0.75) -> StripRegion:
    """Offset the boundary nodes inward by h and validate the result.

    ``h`` is a WidthFunction or any callable of arc length.  ``max_hk``
    bounds h*curvature at the nodes; the offset map folds at 1.
    """
    kit = kit or pan.kit
    if kit.p != pan.p:
        raise ValueError("kit order does not match the panelization")
    if hasattr(h, "at_nodes"):
        hn = h.at_nodes(pan)
    else:
        hn = np.broadcast_to(np.asarray(h(pan.node_params()), dtype=float), pan.z.shape).copy()
    if np.any(hn <= 0):
        raise StripGeometryError("width function is not positive", np.nonzero((hn <= 0).any(axis=1))[0])
    hk = hn * pan.curvature
    bad = np.nonzero((hk > max_hk).any(axis=1))[0]
    if bad.size:
        raise StripGeometryError(
            f"strip too wide for the local curvature on panels {bad.tolist()} "
            f"(max h*kappa = {hk.max():.3g})", bad)
    zt = pan.z - hn * pan.normal
    try:
        inner = Panelization(kit, zt)
    except ValueError as exc:
        raise StripGeometryError(str(exc), np.arange(pan.n_panel)) from None
    # Panelization flips clockwise input; a flip means the offset turned inside out
    if not np.allclose(inner.z, zt) or signed_area(inner) <= 0:
        raise StripGeometryError("fictitious curve is inverted", np.arange(pan.n_panel))
    cross = self_intersections(inner)
    if cross:
        k1, k2 = cross[0]
        raise StripGeometryError(
            f"fictitious curve self-intersects between panels {k1} and {k2}",
            [k for pair in cross for k in pair])
    return StripRegion(pan, inner, h, hn)


def build_strip(pan: Panelization, cfg: WidthFunctionConfig | None = None,
                max_hk: float = 0.75, eps: float | None = None,
                max_rounds: int = 30, max_panels: int = 100_000):
    """Width function and fictitious curve, bisecting panels until valid.

    Panels are split where h*curvature is too large, where the offset curve
    crosses itself, or (with ``eps``) where its position is unresolved.
    Returns (panelization, strip, rounds).
    """
    from .geometry import enforce_panel_rules

    for rounds in range(max_rounds + 1):
        h = build_width_function(pan, cfg)
        try:
            strip = build_fictitious_curve(pan, h, max_hk=max_hk)
            bad = (fictitious_resolution_violations(pan, h, eps)
                   if eps is not None else np.zeros(0, dtype=int))
        except StripGeometryError as exc:
            bad = exc.panels
        if bad.size == 0:
            return pan, strip, rounds
        if rounds == max_rounds:
            break
        pan = enforce_panel_rules(pan.bisect(bad), max_panels)
    raise StripGeometryError(f"no valid strip after {max_rounds} refinement rounds", bad)


def fictitious_resolution_violations(pan: Panelization, h: WidthFunction, eps: float) -> np.ndarray:
    """Panels on which the offset curve's position is not resolved to eps."""
    kit = pan.kit
    E = kit.interp(kit.fine_t)
    Dz = pan.dz @ E.T
    bad = []
    for k in range(pan.n_panel):
        zf = pan.z[k] @ E.T
        nf = -1j * Dz[k] / np.abs(Dz[k])
        u = pan.arc[k] @ E.T
        zt = zf - h(pan.offsets[k] + u) * nf
        if not resolution_check(zt, kit, eps):
            bad.append(k)
    return np.array(bad, dtype=int)


def strip_dump(strip: StripRegion, path) -> None:
    """CSV with x, y, xt, yt, h per node pair."""
    zo = strip.outer.z.ravel()
    zi = strip.inner.z.ravel()
    data = np.column_stack([zo.real, zo.imag, zi.real, zi.imag, strip.h_nodes.ravel()])
    np.savetxt(path, data, delimiter=",", header="x,y,xt,yt,h", comments="")
