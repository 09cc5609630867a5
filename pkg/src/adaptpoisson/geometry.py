"""Gauss-Legendre panelizations of smooth closed curves."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numba
import numpy as np
from scipy.spatial import cKDTree

from .spectral import SpectralKit, bary_weights, build_spectral_kit, resolution_check


class PanelizationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# analytic curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Curve:
    """Closed parametric curve t in [0, 2pi) -> complex.

    ``dz``/``d2z`` are optional analytic derivatives; without them the
    panelizer differentiates samples spectrally.
    """

    name: str
    z: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    dz: Callable[[np.ndarray], np.ndarray] | None = None
    d2z: Callable[[np.ndarray], np.ndarray] | None = None
    t_start: float = 0.0  # parameter window is [t_start, t_start + 2pi)

    def __call__(self, t):
        return self.z(np.asarray(t, dtype=float))


def circle(radius: float = 1.0, cx: float = 0.0, cy: float = 0.0) -> Curve:
    c = complex(cx, cy)
    return Curve("circle", lambda t: c + radius * np.exp(1j * t),
                 {"radius": radius, "cx": cx, "cy": cy},
                 lambda t: 1j * radius * np.exp(1j * t),
                 lambda t: -radius * np.exp(1j * t))


def ellipse(a: float = 1.0, b: float = 0.5) -> Curve:
    return Curve("ellipse", lambda t: a * np.cos(t) + 1j * b * np.sin(t), {"a": a, "b": b},
                 lambda t: -a * np.sin(t) + 1j * b * np.cos(t),
                 lambda t: -a * np.cos(t) - 1j * b * np.sin(t))


def star(r0: float = 1.0, amp: float = 0.25, arms: int = 5) -> Curve:
    k = arms

    def z(t):
        return r0 * (1.0 + amp * np.cos(k * t)) * np.exp(1j * t)

    def dz(t):
        e = np.exp(1j * t)
        return r0 * (-amp * k * np.sin(k * t)) * e + 1j * z(t)

    def d2z(t):
        e = np.exp(1j * t)
        return (r0 * (-amp * k * k * np.cos(k * t)) * e
                + 2j * r0 * (-amp * k * np.sin(k * t)) * e - z(t))

    return Curve("star", z, {"r0": r0, "amp": amp, "arms": arms}, dz, d2z)


def raindrop(eta: float = 1e-3) -> Curve:
    """Rounded-cusp teardrop; minimum radius of curvature ~ eta/4 at t = 0."""
    def g(t):
        return np.sqrt(np.sin(t / 2.0) ** 2 + eta**2)

    def z(t):
        return -0.25 * np.sin(t) - 1j * g(t)

    def dz(t):
        return -0.25 * np.cos(t) - 1j * np.sin(t) / (4.0 * g(t))

    def d2z(t):
        # expanded so the O(sin^2) terms cancel analytically, not in floating point
        s, c = np.sin(t / 2.0), np.cos(t / 2.0)
        gg = np.sqrt(s * s + eta**2)
        num = c * c * eta**2 - s**4 - s * s * eta**2
        return 0.25 * np.sin(t) - 1j * num / (4.0 * gg**3)

    # centre the window on the cusp so parameters near it keep full precision
    return Curve("raindrop", z, {"eta": eta}, dz, d2z, t_start=-np.pi)


CURVES = {"circle": circle, "ellipse": ellipse, "star": star, "raindrop": raindrop}


def make_curve(name: str, **params) -> Curve:
    try:
        return CURVES[name](**params)
    except KeyError:
        raise ValueError(f"unknown curve {name!r}; known: {sorted(CURVES)}") from None


# ---------------------------------------------------------------------------
# panelization
# ---------------------------------------------------------------------------

@dataclass
class Panelization:
    """Ordered closed chain of order-p Gauss-Legendre panels.

    ``z`` has shape (n_panel, p+1) with complex node coordinates.  When built
    from an analytic curve, ``tparam`` stores each panel's parameter interval
    (start, end) so bisection can re-sample the curve.
    """

    kit: SpectralKit
    z: np.ndarray
    curve: Curve | None = None
    tparam: np.ndarray | None = None

    dz: np.ndarray = field(init=False, repr=False)
    speed: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    tangent: np.ndarray = field(init=False, repr=False)
    normal: np.ndarray = field(init=False, repr=False)
    curvature: np.ndarray = field(init=False, repr=False)
    arc: np.ndarray = field(init=False, repr=False)
    length: np.ndarray = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)
    perimeter: float = field(init=False)
    ends: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        kit = self.kit
        z = np.array(self.z, dtype=complex)
        if z.ndim != 2 or z.shape[1] != kit.n:
            raise ValueError(f"node array must have shape (n_panel, {kit.n})")
        dz = z @ kit.D.T
        area = 0.5 * np.sum(kit.W[None, :] * np.imag(np.conj(z) * dz))
        if area < 0:
            z = z[::-1, ::-1].copy()
            dz = z @ kit.D.T
            if self.tparam is not None:
                self.tparam = np.asarray(self.tparam)[::-1, ::-1].copy()
        self.z = z
        self.dz = dz
        self.speed = np.abs(dz)
        self.weights = kit.W[None, :] * self.speed
        self.tangent = dz / self.speed
        self.normal = -1j * self.tangent
        d2z = dz @ kit.D.T
        self.curvature = np.imag(np.conj(dz) * d2z) / self.speed**3
        a = self.speed @ kit.A.T
        ae = a @ kit.endpoints.T
        self.arc = a - ae[:, :1]
        self.length = ae[:, 1] - ae[:, 0]
        self.offsets = np.concatenate([[0.0], np.cumsum(self.length)[:-1]])
        self.perimeter = float(self.length.sum())
        self.ends = z @ kit.endpoints.T
        for arr in (self.z, self.dz, self.speed, self.weights, self.normal):
            arr.setflags(write=False)

    # -- basic views -------------------------------------------------------
    @property
    def p(self) -> int:
        return self.kit.p

    @property
    def n_panel(self) -> int:
        return self.z.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.z.size

    @property
    def nodes(self) -> np.ndarray:
        """(N, 2) real node coordinates in panel order."""
        zf = self.z.ravel()
        return np.column_stack([zf.real, zf.imag])

    def node_params(self) -> np.ndarray:
        """Global arc-length coordinate t_{j,k} = A_k + a_{j,k} of every node."""
        return self.offsets[:, None] + self.arc

    def junction_gaps(self) -> np.ndarray:
        return np.abs(self.ends[:, 1] - np.roll(self.ends[:, 0], -1))

    # -- refinement ---------------------------------------------------------
    def split_param(self, k: int) -> float:
        """Panel coordinate s in (-1, 1) halving the arc length of panel k."""
        kit = self.kit
        target = 0.5 * self.length[k]
        sv = 0.0
        for _ in range(50):
            row = kit.interp(np.array([sv]))[0]
            fval = row @ self.arc[k] - target
            dval = row @ self.speed[k]
            step = fval / dval
            sv = min(max(sv - step, -0.9), 0.9)
            if abs(step) < 1e-15:
                break
        return sv

    def bisect(self, idx, by_arc: bool = True) -> "Panelization":
        """Split the listed panels in two (at the arc-length midpoint by default)."""
        idx = set(int(i) for i in np.atleast_1d(idx))
        if not idx:
            return self
        kit = self.kit
        rows, tps = [], []
        for k in range(self.n_panel):
            if k not in idx:
                rows.append(self.z[k])
                if self.tparam is not None:
                    tps.append(self.tparam[k])
                continue
            sm = self.split_param(k) if by_arc else 0.0
            if self.curve is not None and self.tparam is not None:
                t0, t1 = self.tparam[k]
                tm = t0 + 0.5 * (sm + 1.0) * (t1 - t0)
                for a, b in ((t0, tm), (tm, t1)):
                    rows.append(_sample(self.curve, kit, a, b))
                    tps.append((a, b))
            else:
                for a, b in ((-1.0, sm), (sm, 1.0)):
                    rows.append(kit.interp(a + (kit.t + 1.0) * 0.5 * (b - a)) @ self.z[k])
        tparam = np.array(tps) if self.tparam is not None else None
        return Panelization(kit, np.array(rows), self.curve, tparam)


def _sample(curve: Curve, kit: SpectralKit, a: float, b: float) -> np.ndarray:
    return curve(a + (kit.t + 1.0) * 0.5 * (b - a))


def panelization_from_curve(curve: Curve, p: int, intervals) -> Panelization:
    kit = build_spectral_kit(p)
    iv = np.asarray(intervals, dtype=float)
    z = np.array([_sample(curve, kit, a, b) for a, b in iv])
    return Panelization(kit, z, curve, iv)


def uniform_panelization(curve: Curve, p: int, n_panel: int) -> Panelization:
    e = curve.t_start + np.linspace(0.0, 2 * np.pi, n_panel + 1)
    return panelization_from_curve(curve, p, np.column_stack([e[:-1], e[1:]]))


# ---------------------------------------------------------------------------
# adaptive panelization
# ---------------------------------------------------------------------------

def _monitors_resolved(curve: Curve, kit: SpectralKit, a: float, b: float, eps: float) -> bool:
    t = a + (kit.fine_t + 1.0) * 0.5 * (b - a)
    zf = curve(t)
    if curve.dz is not None and curve.d2z is not None:
        d1 = curve.dz(t)
        d2 = curve.d2z(t)
    else:
        # detrend before differentiating to keep roundoff relative to the
        # panel scale rather than the absolute position
        zc = zf - zf.mean()
        d1 = zc @ kit.fine_D.T
        d2 = d1 @ kit.fine_D.T
    sp = np.abs(d1)
    with np.errstate(divide="ignore", invalid="ignore"):
        bend = np.imag(d2 / d1) ** 2 / sp
    if not np.all(np.isfinite(bend)):
        return False
    return all(resolution_check(v, kit, eps) for v in (zf, sp, bend))


def _speed_samples(curve: Curve, kit: SpectralKit, a: float, b: float) -> np.ndarray:
    t = a + (kit.fine_t + 1.0) * 0.5 * (b - a)
    if curve.dz is not None:
        return np.abs(curve.dz(t)) * 0.5 * (b - a)
    zf = curve(t)
    return np.abs((zf - zf.mean()) @ kit.fine_D.T)


def _arc_midpoint(curve: Curve, kit: SpectralKit, a: float, b: float) -> float:
    """Parameter value splitting [a, b] into two pieces of equal arc length."""
    sp = _speed_samples(curve, kit, a, b)
    c = np.polynomial.legendre.Legendre(kit.fine_analysis @ sp)
    arc = c.integ(lbnd=-1.0)
    half = 0.5 * arc(1.0)
    s = 0.0
    for _ in range(60):
        step = (arc(s) - half) / c(s)
        s = min(max(s - step, -0.95), 0.95)
        if abs(step) < 1e-15:
            break
    return a + 0.5 * (s + 1.0) * (b - a)


def separation_violations(pan: Panelization, factor: float = 3.0,
                          arc_slack: float = 1.5) -> np.ndarray:
    """Panels k with a non-neighbouring node closer than ``factor * a_k``.

    A node is non-neighbouring when its arc-length gap to panel k exceeds
    ``arc_slack * factor * a_k``: the curve has folded back toward the panel.
    """
    n, m = pan.n_panel, pan.kit.n
    if n < 4:
        return np.zeros(0, dtype=int)
    pts = pan.nodes
    T = pan.node_params().ravel()
    L = pan.perimeter
    owner = np.repeat(np.arange(n), m)
    tree = cKDTree(pts)
    bad = []
    for k in range(n):
        r = factor * pan.length[k]
        hits = set()
        for h in tree.query_ball_point(pts[owner == k], r):
            hits.update(h)
        if not hits:
            continue
        h = np.fromiter(hits, dtype=int)
        h = h[owner[h] != k]
        if h.size == 0:
            continue
        a0 = pan.offsets[k]
        d0 = np.mod(T[h] - a0, L)  # forward distance from panel start
        after = d0 - pan.length[k]
        gap = np.minimum(np.where(after > 0, after, 0.0), L - d0)
        if np.any(gap > arc_slack * r):
            bad.append(k)
    return np.array(bad, dtype=int)


def level_violations(pan: Panelization, ratio: float = 2.0 * (1 + 1e-6)) -> np.ndarray:
    """Larger member of each adjacent pair whose arc lengths differ by > ratio.

    The default carries 1e-6 relative slack so exact arc halves that differ
    only by roundoff do not trigger a cascade.
    """
    a = pan.length
    nxt = np.roll(a, -1)
    bad = set(np.nonzero(a > ratio * nxt)[0].tolist())
    bad |= set(((np.nonzero(nxt > ratio * a)[0] + 1) % pan.n_panel).tolist())
    return np.array(sorted(bad), dtype=int)


def enforce_panel_rules(pan: Panelization, max_panels: int = 100_000) -> Panelization:
    """Bisect until the 3x separation rule and 2:1 level restriction hold."""
    while True:
        changed = False
        while True:
            bad = separation_violations(pan)
            if bad.size == 0:
                break
            pan = pan.bisect(bad)
            changed = True
            _check_count(pan, max_panels, bad)
        bad = level_violations(pan)
        if bad.size:
            pan = pan.bisect(bad)
            changed = True
            _check_count(pan, max_panels, bad)
        if not changed:
            return pan


def _check_count(pan: Panelization, max_panels: int, where) -> None:
    if pan.n_panel > max_panels:
        loc = None
        if pan.tparam is not None and len(where):
            loc = float(np.mean(pan.tparam[np.clip(where, 0, pan.n_panel - 1)]))
        raise PanelizationError(
            f"panel count exceeded {max_panels}; refinement concentrating near t={loc}")


def adaptive_panelize(curve: Curve, p: int = 16, eps: float = 1e-10,
                      n_init: int = 4, max_panels: int = 100_000,
                      postprocess: bool = True) -> Panelization:
    """Bisect parameter intervals until z, |z'| and the bending energy are resolved."""
    kit = build_spectral_kit(p)
    edges = curve.t_start + np.linspace(0.0, 2 * np.pi, n_init + 1)
    todo = list(zip(edges[:-1], edges[1:]))
    done: list[tuple[float, float]] = []
    while todo:
        nxt = []
        for a, b in todo:
            if _monitors_resolved(curve, kit, a, b, eps):
                done.append((a, b))
            else:
                m = _arc_midpoint(curve, kit, a, b)
                nxt.extend([(a, m), (m, b)])
        todo = nxt
        if len(done) + len(todo) > max_panels:
            loc = float(np.mean([0.5 * (a + b) for a, b in todo])) if todo else None
            raise PanelizationError(
                f"panel count exceeded {max_panels}; unresolved near t={loc}")
    done.sort()
    pan = panelization_from_curve(curve, p, done)
    if postprocess:
        pan = enforce_panel_rules(pan, max_panels)
    return pan


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def panel_distance(pan: Panelization, k1: int, k2: int) -> float:
    d = np.abs(pan.z[k1][:, None] - pan.z[k2][None, :])
    return float(d.min())


def arc_length_chart(pan: Panelization, a) -> np.ndarray:
    """Points Lambda(a) as an (m, 2) array (or (2,) for scalar input)."""
    scalar = np.ndim(a) == 0
    a = np.mod(np.atleast_1d(np.asarray(a, dtype=float)), pan.perimeter)
    k = np.clip(np.searchsorted(pan.offsets, a, side="right") - 1, 0, pan.n_panel - 1)
    out = np.empty(a.size, dtype=complex)
    for kk in np.unique(k):
        sel = k == kk
        x = pan.arc[kk]
        w = bary_weights(x)
        d = (a[sel] - pan.offsets[kk])[:, None] - x[None, :]
        exact = d == 0.0
        d[exact] = 1.0
        m = w[None, :] / d
        m /= m.sum(axis=1, keepdims=True)
        rows = exact.any(axis=1)
        m[rows] = exact[rows]
        out[sel] = m @ pan.z[kk]
    pts = np.column_stack([out.real, out.imag])
    return pts[0] if scalar else pts


# ---------------------------------------------------------------------------
# node files
# ---------------------------------------------------------------------------

def save_nodes(pan: Panelization, path, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "txt")
    nodes = pan.nodes
    if fmt == "json":
        doc = {"format": "panel-nodes", "version": 1, "p": pan.p,
               "n_panel": pan.n_panel, "nodes": nodes.tolist()}
        path.write_text(json.dumps(doc))
    else:
        lines = [f"{pan.p}"] + [f"{x!r} {y!r}" for x, y in nodes.tolist()]
        path.write_text("\n".join(lines) + "\n")
    return path


def load_nodes(path) -> Panelization:
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        p = int(doc["p"])
        nodes = np.asarray(doc["nodes"], dtype=float)
    else:
        rows = text.split("\n")
        p = int(rows[0].strip())
        nodes = np.array([[float(v) for v in r.split()] for r in rows[1:] if r.strip()])
    kit = build_spectral_kit(p)
    if nodes.shape[0] % kit.n:
        raise ValueError("node count is not a multiple of p+1")
    z = (nodes[:, 0] + 1j * nodes[:, 1]).reshape(-1, kit.n)
    return Panelization(kit, z)


def signed_area(pan: Panelization) -> float:
    return float(0.5 * np.sum(pan.kit.W[None, :] * np.imag(np.conj(pan.z) * pan.dz)))


@numba.njit(cache=True)
def _pip(px, py, x0, y0):
    m = x0.size
    out = np.zeros(px.size, dtype=np.bool_)
    for i in range(px.size):
        x, y = px[i], py[i]
        c = False
        for e in range(m):
            a, b = x0[e], y0[e]
            cc, d = x0[(e + 1) % m], y0[(e + 1) % m]
            if (b > y) != (d > y):
                if x < a + (y - b) * (cc - a) / (d - b):
                    c = not c
        out[i] = c
    return out


def point_in_polygon(px, py, poly: np.ndarray) -> np.ndarray:
    """Even-odd ray casting; ``poly`` is a closed (m, 2) vertex list (not repeated)."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    res = _pip(px.ravel(), py.ravel(), np.ascontiguousarray(poly[:, 0]),
               np.ascontiguousarray(poly[:, 1]))
    return res.reshape(px.shape)


def dense_polyline(pan: Panelization, factor: int = 4) -> np.ndarray:
    """Panel interpolants sampled at ``factor*(p+1)`` points each, (m, 2)."""
    kit = pan.kit
    m = factor * kit.n
    s = -1.0 + 2.0 * np.arange(m) / m
    E = kit.interp(s)
    zz = (pan.z @ E.T).ravel()
    return np.column_stack([zz.real, zz.imag])

