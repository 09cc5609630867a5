"""Truncated free-space volume potential v(x) = -int Phi(x, y) f(y) dy over quadtree leaves.

Direct path: every source leaf is summed; leaves at least one diameter
away use a tensor Gauss rule, nearer ones recursive subdivision toward the
target, and the cell touching the target a Duffy-type split into four
triangles (exact log-weighted rule along rays, segment moments across).
Fast path: Barnes-Hut traversal with per-node multipole expansions of
order ceil(log2(1/eps_quad)), opening angle 1/2.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as npcheb

from . import _volkernels as vk
from .quadtree import INSIDE, TruncatedQuadtree, cheb_eval_2d
from .spectral import cheb_diff_matrix, cheb_points, gauss_legendre, interp_matrix, log_gauss

log = logging.getLogger(__name__)
_INV2PI = 1.0 / (2.0 * np.pi)


@dataclass
class QuadratureRules:
    """Fixed rules shared by all near and far cells."""

    n: int                      # polynomial order + 1 of the leaf data
    nq: int                     # tensor Gauss points per side on far cells
    n_fine: int = 48
    gq: np.ndarray = field(init=False, repr=False)
    wq: np.ndarray = field(init=False, repr=False)
    ul: np.ndarray = field(init=False, repr=False)
    wl: np.ndarray = field(init=False, repr=False)
    ug: np.ndarray = field(init=False, repr=False)
    wg: np.ndarray = field(init=False, repr=False)
    tn: np.ndarray = field(init=False, repr=False)
    wn: np.ndarray = field(init=False, repr=False)
    Vinv: np.ndarray = field(init=False, repr=False)
    ft: np.ndarray = field(init=False, repr=False)
    fw: np.ndarray = field(init=False, repr=False)
    fI: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.n
        self.gq, self.wq = gauss_legendre(self.nq)
        self.ul, self.wl = log_gauss(n)
        g, w = gauss_legendre(n)
        self.ug, self.wg = 0.5 * (g + 1.0), 0.5 * w
        self.tn, self.wn = g, w
        self.Vinv = np.linalg.inv(np.vander(g, n, increasing=True))
        self.ft, self.fw = gauss_legendre(self.n_fine)
        self.fI = interp_matrix(g, self.ft)

    def args(self):
        return (self.gq, self.wq, self.ul, self.wl, self.ug, self.wg, self.tn, self.wn,
                self.Vinv, self.ft, self.fw, self.fI)


def multipole_order(eps_quad: float) -> int:
    return int(np.ceil(np.log(1.0 / eps_quad) / np.log(2.0)))


class VolumePotentialEvaluator:
    """Evaluates v_bulk and its gradient from a truncated quadtree."""

    def __init__(self, tree: TruncatedQuadtree, eps_quad: float = 1e-11, nq: int | None = None):
        self.tree = tree
        self.eps_quad = eps_quad
        n = tree.config.p + 1
        self.rules = QuadratureRules(n, nq or n)
        c = tree.centers
        self.cx = np.ascontiguousarray(c[:, 0])
        self.cy = np.ascontiguousarray(c[:, 1])
        self.h = np.ascontiguousarray(tree.half)
        self.children = np.ascontiguousarray(tree.children)
        self.slot = np.ascontiguousarray(tree.slot)
        self.coeffs = np.ascontiguousarray(tree.coeffs)
        self.leaf_nodes = tree.source_leaves
        has = np.zeros(tree.n_boxes, dtype=np.bool_)
        for b in self.leaf_nodes:
            while b >= 0 and not has[b]:
                has[b] = True
                b = tree.parent[b]
        self.has_src = has
        self.src_pts, self.src_q = self._leaf_sources()
        self.order = multipole_order(eps_quad)
        self._mp = None

    # -- sources -----------------------------------------------------------
    def _leaf_sources(self):
        r = self.rules
        g, w = r.gq, r.wq
        nL = self.leaf_nodes.size
        if nL == 0:
            return np.zeros((0, r.nq ** 2), complex), np.zeros((0, r.nq ** 2))
        T = npcheb.chebvander(g, r.n - 1)                      # (nq, n)
        P = np.einsum("ai,sij,bj->sab", T, self.coeffs, T)    # P[s, a(y), b(x)]
        h = self.h[self.leaf_nodes]
        X = self.cx[self.leaf_nodes, None, None] + h[:, None, None] * g[None, None, :]
        Y = self.cy[self.leaf_nodes, None, None] + h[:, None, None] * g[None, :, None]
        pts = (X + 1j * Y).reshape(nL, -1)
        q = (P * (w[:, None] * w[None, :])[None] * (h ** 2)[:, None, None]).reshape(nL, -1)
        return np.ascontiguousarray(pts), np.ascontiguousarray(q)

    @property
    def multipoles(self) -> np.ndarray:
        if self._mp is None:
            self._mp = vk.compute_multipoles(self.cx, self.cy, self.h, self.tree.parent,
                                             self.leaf_nodes, self.src_pts, self.src_q, self.order)
        return self._mp

    # -- evaluation --------------------------------------------------------
    def _run(self, targets, grad: bool, fast: bool):
        z = np.asarray(targets)
        if not np.iscomplexobj(z):
            z = np.atleast_2d(z.astype(float))
            z = z[:, 0] + 1j * z[:, 1]
        z = np.atleast_1d(z).ravel()
        val = np.zeros(z.size)
        gr = np.zeros(z.size, dtype=complex)
        if self.leaf_nodes.size == 0 or z.size == 0:
            return val, gr
        mp = self.multipoles if fast else np.zeros((1, 1), complex)
        vk.eval_tree(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag), self.cx, self.cy,
                     self.h, self.children, self.slot, self.has_src, mp, fast, self.src_pts,
                     self.src_q, self.coeffs, *self.rules.args(), grad, val, gr)
        return _INV2PI * val, _INV2PI * gr

    def eval_direct(self, targets) -> np.ndarray:
        return self._run(targets, False, False)[0]

    def eval_fast(self, targets) -> np.ndarray:
        return self._run(targets, False, True)[0]

    def __call__(self, targets, fast: bool = True) -> np.ndarray:
        return self._run(targets, False, fast)[0]

    def value_and_gradient(self, targets, fast: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Values and complex gradients v_x + i v_y."""
        return self._run(targets, True, fast)


def eval_direct(tree: TruncatedQuadtree, targets, eps_quad: float = 1e-11) -> np.ndarray:
    return VolumePotentialEvaluator(tree, eps_quad).eval_direct(targets)


def eval_fast(tree: TruncatedQuadtree, targets, eps_quad: float = 1e-11) -> np.ndarray:
    return VolumePotentialEvaluator(tree, eps_quad).eval_fast(targets)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def residual_on_leaf(evaluator: VolumePotentialEvaluator, leaf: int, allow_strip: bool = False) -> float:
    """max |Lap v - f| / max |f| on the leaf's Chebyshev grid (spectral Laplacian)."""
    tree = evaluator.tree
    if tree.children[leaf, 0] >= 0:
        raise ValueError("not a leaf")
    if not allow_strip and not (tree.tag_gamma[leaf] == INSIDE and tree.tag_fict[leaf] == INSIDE):
        raise ValueError("leaf is not inside the bulk region; residual is meaningless near truncation")
    n = tree.config.p + 1
    t = cheb_points(n)
    c = tree.centers[leaf]
    h = tree.half[leaf]
    X, Y = np.meshgrid(c[0] + h * t, c[1] + h * t)
    V = evaluator(X.ravel() + 1j * Y.ravel()).reshape(n, n)
    D2 = np.linalg.matrix_power(cheb_diff_matrix(n), 2) / h ** 2
    lap = V @ D2.T + D2 @ V
    s = tree.slot[leaf]
    F = cheb_eval_2d(tree.coeffs[s], c, h, X, Y) if s >= 0 else np.zeros_like(X)
    scale = max(np.abs(F).max(), tree.vscale)
    return float(np.abs(lap - F).max() / scale)


@dataclass
class DecayReport:
    rates: np.ndarray            # fitted rho per panel (inf when floor-limited from the start)
    floor_limited: np.ndarray
    floors: np.ndarray
    tangential_rates: np.ndarray

    def passes(self, rho_min: float = 1.6, floor: float = 1e-12) -> np.ndarray:
        return (self.rates >= rho_min) | (self.floor_limited & (self.floors < floor))


def _fit_rate(coef: np.ndarray, floor_rel: float = 1e-13) -> tuple[float, bool, float]:
    a = np.abs(coef)
    scale = a.max()
    if scale == 0.0:
        return np.inf, True, 0.0
    rel = a / scale
    # straight-decay window: from the first index to the last one above the floor
    above = np.flatnonzero(rel > floor_rel)
    last = above[-1] if above.size else 0
    floor_limited = last < a.size - 3
    k = np.arange(last + 1)
    if last < 3:
        return np.inf, True, float(a[-3:].max() / scale)
    slope = np.polyfit(k, np.log(rel[: last + 1] + 1e-300), 1)[0]
    return float(np.exp(-slope)), bool(floor_limited), float(a[-3:].max() / max(scale, 1e-300))


def verify_geometric_decay(evaluator: VolumePotentialEvaluator, fict, n_max: int = 40,
                           floor_rel: float = 1e-13) -> DecayReport:
    """Chebyshev decay of v_bulk (and its tangential derivative) along each fictitious panel."""
    kit = fict.kit
    t = cheb_points(n_max + 1)
    M = kit.interp(t)
    zs = (M @ fict.z.T).T                      # (n_panel, n_max+1)
    dzs = (M @ fict.dz.T).T
    vals, grads = evaluator.value_and_gradient(zs.ravel())
    vals = vals.reshape(zs.shape)
    grads = grads.reshape(zs.shape)
    tang = (grads.conj() * dzs).real           # d v / d t along the panel chart
    V2C = np.linalg.inv(npcheb.chebvander(t, n_max))
    rates, lim, floors, trates = [], [], [], []
    for k in range(zs.shape[0]):
        r, fl, fv = _fit_rate(V2C @ vals[k], floor_rel)
        rt, _, _ = _fit_rate(V2C @ tang[k], floor_rel)
        rates.append(r)
        lim.append(fl)
        floors.append(fv)
        trates.append(rt)
    return DecayReport(np.array(rates), np.array(lim), np.array(floors), np.array(trates))
