"""Truncated, 2:1-balanced quadtree approximation of the volume source.

Boxes are square and addressed by integer keys (level, i, j) inside the root
box.  Each box carries a tag against Gamma and against the fictitious curve
(OUTSIDE / INSIDE / CUT).  Leaves that are not fully outside Gamma hold the
tensor Chebyshev coefficients of f on the (p+1) x (p+1) second-kind grid,
with f set to zero outside the domain on cut boxes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import shapely
from scipy.spatial import cKDTree

from .geometry import Panelization
from .spectral import cheb_points, cheb_vals2coeffs_matrix
from .strip_geometry import StripRegion

OUTSIDE, INSIDE, CUT = 0, 1, 2
_CHILD_OFFSETS = ((0, 0), (1, 0), (0, 1), (1, 1))   # SW, SE, NW, NE as (di, dj)


class QuadtreeError(RuntimeError):
    def __init__(self, msg: str, center=None):
        super().__init__(msg)
        self.center = center


# ---------------------------------------------------------------------------
# curve polylines and box classification
# ---------------------------------------------------------------------------

@dataclass
class CurveShape:
    """Upsampled node polyline of a closed panelization, prepared for queries."""

    pan: Panelization
    factor: int = 4
    ring: object = field(init=False, repr=False)
    polygon: object = field(init=False, repr=False)

    def __post_init__(self):
        kit = self.pan.kit
        m = self.factor * kit.n
        s = np.linspace(-1.0, 1.0, m, endpoint=False)
        pts = (kit.interp(s) @ self.pan.z.T).T.ravel()
        xy = np.column_stack([pts.real, pts.imag])
        self.ring = shapely.LinearRing(xy)
        self.polygon = shapely.Polygon(xy)
        shapely.prepare(self.ring)
        shapely.prepare(self.polygon)

    def contains(self, x, y) -> np.ndarray:
        return shapely.contains_xy(self.polygon, np.asarray(x, float), np.asarray(y, float))


def classify_boxes(cx, cy, half, shape: CurveShape) -> np.ndarray:
    """Vectorized OUTSIDE/INSIDE/CUT tags of square boxes against a curve."""
    cx, cy, half = (np.atleast_1d(np.asarray(a, float)) for a in (cx, cy, half))
    if np.any(half <= 0):
        raise ValueError("degenerate box (non-positive half-width)")
    boxes = shapely.box(cx - half, cy - half, cx + half, cy + half)
    cut = shapely.intersects(shape.ring, boxes)
    tags = np.where(shape.contains(cx, cy), INSIDE, OUTSIDE).astype(np.int8)
    tags[cut] = CUT
    return tags


def classify_box(center, half: float, curve: Panelization | CurveShape) -> int:
    shape = curve if isinstance(curve, CurveShape) else CurveShape(curve)
    return int(classify_boxes([center[0]], [center[1]], [half], shape)[0])


# ---------------------------------------------------------------------------
# Chebyshev coefficients on boxes
# ---------------------------------------------------------------------------

def box_grid(cx, cy, half, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor second-kind grids; X[b, i, j] = x_j, Y[b, i, j] = y_i."""
    t = cheb_points(n)
    cx, cy, half = (np.atleast_1d(np.asarray(a, float)) for a in (cx, cy, half))
    X = cx[:, None, None] + half[:, None, None] * t[None, None, :]
    Y = cy[:, None, None] + half[:, None, None] * t[None, :, None]
    X = np.broadcast_to(X, (cx.size, n, n))
    Y = np.broadcast_to(Y, (cx.size, n, n))
    return X, Y


def values_to_coeffs(F: np.ndarray) -> np.ndarray:
    """F[..., i, j] = f(x_j, y_i)  ->  C[..., i, j] multiplying T_j(x) T_i(y)."""
    M = cheb_vals2coeffs_matrix(F.shape[-1])
    return np.einsum("ab,...bc,dc->...ad", M, F, M)


def cheb_coeffs_2d(f: Callable, center, half: float, p: int,
                   mask: Callable | None = None) -> np.ndarray:
    """Coefficient block of f on one box; ``mask(x, y)`` zeroes samples where False."""
    X, Y = box_grid([center[0]], [center[1]], [half], p + 1)
    F = np.asarray(f(X[0], Y[0]), dtype=float)
    if mask is not None:
        F = np.where(mask(X[0], Y[0]), F, 0.0)
    return values_to_coeffs(F)


def cheb_eval_2d(C: np.ndarray, center, half: float, x, y) -> np.ndarray:
    """Evaluate one coefficient block at points (x, y)."""
    from numpy.polynomial import chebyshev as npcheb
    u = (np.asarray(x, float) - center[0]) / half
    v = (np.asarray(y, float) - center[1]) / half
    return npcheb.chebval2d(u, v, C.T)


def tail_size(C: np.ndarray, shells: int = 2) -> np.ndarray:
    """Mean |coefficient| over the last ``shells`` rows and columns (max of the two)."""
    n = C.shape[-1]
    tx = np.abs(C[..., :, -shells:]).sum(axis=(-2, -1)) / (shells * n)
    ty = np.abs(C[..., -shells:, :]).sum(axis=(-2, -1)) / (shells * n)
    return np.maximum(tx, ty)


# ---------------------------------------------------------------------------
# tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreeConfig:
    p: int = 16
    eps: float = 1e-10
    max_depth: int = 40
    strip_criterion: bool = True     # the diagonal < s/2 refinement near the strip
    vscale: float | None = None      # None: max |f| over all sampled boxes (two passes)
    margin: float = 0.2


@dataclass
class BoxNode:
    index: int
    center: tuple[float, float]
    half: float
    level: int
    parent: int
    children: tuple[int, ...]
    tag_gamma: int
    tag_fict: int
    coeffs: np.ndarray | None

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class TruncatedQuadtree:
    """Arena of boxes.  ``slot[b]`` indexes ``coeffs`` for contributing leaves, else -1."""

    config: TreeConfig
    root_center: tuple[float, float]
    root_half: float
    level: np.ndarray
    ij: np.ndarray                # (n, 2) integer box coordinates at its level
    parent: np.ndarray
    children: np.ndarray          # (n, 4), -1 for leaves
    tag_gamma: np.ndarray
    tag_fict: np.ndarray
    slot: np.ndarray
    coeffs: np.ndarray            # (n_source, p+1, p+1)
    vscale: float
    strip_width: np.ndarray       # local strip width s used for each box (nan if not in S)
    n_balance_splits: int = 0

    # -- geometry ----------------------------------------------------------
    @property
    def n_boxes(self) -> int:
        return self.level.size

    @property
    def half(self) -> np.ndarray:
        return self.root_half / 2.0 ** self.level

    @property
    def centers(self) -> np.ndarray:
        h = self.half
        x0 = self.root_center[0] - self.root_half
        y0 = self.root_center[1] - self.root_half
        return np.column_stack([x0 + (2 * self.ij[:, 0] + 1) * h, y0 + (2 * self.ij[:, 1] + 1) * h])

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.children[:, 0] < 0)

    @property
    def source_leaves(self) -> np.ndarray:
        return np.flatnonzero(self.slot >= 0)

    @property
    def n_leaves(self) -> int:
        return self.leaves.size

    @property
    def n_dof(self) -> int:
        return self.source_leaves.size * (self.config.p + 1) ** 2

    def box(self, b: int) -> BoxNode:
        c = self.centers[b]
        ch = tuple(int(k) for k in self.children[b] if k >= 0)
        return BoxNode(b, (float(c[0]), float(c[1])), float(self.half[b]), int(self.level[b]),
                       int(self.parent[b]), ch, int(self.tag_gamma[b]), int(self.tag_fict[b]),
                       self.coeffs[self.slot[b]] if self.slot[b] >= 0 else None)

    def leaf_keys(self) -> dict:
        return {(int(self.level[b]), int(self.ij[b, 0]), int(self.ij[b, 1])): int(b) for b in self.leaves}

    def touches_strip(self) -> np.ndarray:
        g, t = self.tag_gamma, self.tag_fict
        return (g == CUT) | (t == CUT) | ((g == INSIDE) & (t == OUTSIDE))

    def evaluate_source(self, x, y) -> np.ndarray:
        """The piecewise-polynomial source at points (zero off the source leaves)."""
        x = np.atleast_1d(np.asarray(x, float))
        y = np.atleast_1d(np.asarray(y, float))
        out = np.zeros(x.shape)
        lv = self.source_leaves
        c = self.centers[lv]
        h = self.half[lv]
        for q in range(x.size):
            hit = np.flatnonzero((np.abs(x.flat[q] - c[:, 0]) <= h) & (np.abs(y.flat[q] - c[:, 1]) <= h))
            if hit.size:
                b = lv[hit[0]]
                out.flat[q] = cheb_eval_2d(self.coeffs[self.slot[b]], c[hit[0]], h[hit[0]], x.flat[q], y.flat[q])
        return out


def root_box(pan: Panelization, margin: float = 0.2) -> tuple[tuple[float, float], float]:
    """Power-of-two square centred on the bounding box of the curve, expanded by ``margin``."""
    z = pan.z.ravel()
    lo = np.array([z.real.min(), z.imag.min()])
    hi = np.array([z.real.max(), z.imag.max()])
    c = 0.5 * (lo + hi)
    half = 0.5 * (1.0 + margin) * float((hi - lo).max())
    half = 2.0 ** np.ceil(np.log2(half))
    return (float(c[0]), float(c[1])), float(half)


class _Builder:
    def __init__(self, f, strip: StripRegion, cfg: TreeConfig, vscale: float | None):
        self.f = f
        self.strip = strip
        self.cfg = cfg
        self.n = cfg.p + 1
        self.gamma = CurveShape(strip.outer)
        self.fict = CurveShape(strip.inner)
        self.node_tree = cKDTree(np.column_stack([strip.outer.z.real.ravel(), strip.outer.z.imag.ravel()]))
        self.width = np.abs(strip.outer.z - strip.inner.z).ravel()
        self.vscale = vscale
        self.sample_max = 0.0
        self.center, self.root_half = root_box(strip.outer, cfg.margin)
        self.level: list[int] = []
        self.ij: list[tuple[int, int]] = []
        self.parent: list[int] = []
        self.children: list[list[int]] = []
        self.tag_g: list[int] = []
        self.tag_f: list[int] = []
        self.coeffs: dict[int, np.ndarray] = {}
        self.swidth: list[float] = []
        self.keys: dict[tuple[int, int, int], int] = {}

    def geometry(self, level, ij):
        level = np.asarray(level)
        ij = np.asarray(ij).reshape(-1, 2)
        h = self.root_half / 2.0 ** level
        cx = self.center[0] - self.root_half + (2 * ij[:, 0] + 1) * h
        cy = self.center[1] - self.root_half + (2 * ij[:, 1] + 1) * h
        return cx, cy, h

    def add(self, level, ij, parent):
        """Create boxes, classify them and sample f; returns their indices."""
        cx, cy, h = self.geometry(level, ij)
        tg = classify_boxes(cx, cy, h, self.gamma)
        tf = classify_boxes(cx, cy, h, self.fict)
        tf[tg == OUTSIDE] = OUTSIDE
        tg[tf == INSIDE] = INSIDE
        idx = []
        for q in range(len(cx)):
            b = len(self.level)
            self.level.append(int(level[q]))
            self.ij.append((int(ij[q][0]), int(ij[q][1])))
            self.parent.append(int(parent[q]))
            self.children.append([])
            self.tag_g.append(int(tg[q]))
            self.tag_f.append(int(tf[q]))
            self.keys[(int(level[q]), int(ij[q][0]), int(ij[q][1]))] = b
            idx.append(b)
        idx = np.array(idx, dtype=int)
        strip_touch = (tg == CUT) | (tf == CUT) | ((tg == INSIDE) & (tf == OUTSIDE))
        s = np.full(len(cx), np.nan)
        if strip_touch.any():
            _, near = self.node_tree.query(np.column_stack([cx[strip_touch], cy[strip_touch]]))
            s[strip_touch] = self.width[near]
        self.swidth.extend(s.tolist())
        keep = tg != OUTSIDE
        if keep.any():
            X, Y = box_grid(cx[keep], cy[keep], h[keep], self.n)
            F = np.asarray(self.f(X, Y), dtype=float) * np.ones(X.shape)
            cut = tg[keep] == CUT
            if cut.any():
                inside = self.gamma.contains(X[cut].ravel(), Y[cut].ravel()).reshape(X[cut].shape)
                F[cut] = np.where(inside, F[cut], 0.0)
            if not np.all(np.isfinite(F)):
                raise QuadtreeError("f is not finite on a box", (float(cx[keep][0]), float(cy[keep][0])))
            inner = tg[keep] == INSIDE
            if inner.any():
                self.sample_max = max(self.sample_max, float(np.abs(F[inner]).max()))
            C = values_to_coeffs(F)
            for q, b in enumerate(idx[keep]):
                self.coeffs[int(b)] = C[q]
        return idx, cx, cy, h, s

    def needs_refine(self, b, h, s) -> bool:
        g, t = self.tag_g[b], self.tag_f[b]
        if g == OUTSIDE:
            return False
        refine = False
        if g == INSIDE:
            vs = self.vscale if self.vscale is not None else max(self.sample_max, 1e-300)
            if tail_size(self.coeffs[b]) > self.cfg.eps * vs:
                refine = True
        touches_bulk = t in (INSIDE, CUT)
        touches_ext = g in (OUTSIDE, CUT)
        in_strip = g == CUT or t == CUT or (g == INSIDE and t == OUTSIDE)
        if touches_bulk and touches_ext:
            refine = True
        elif in_strip and self.cfg.strip_criterion:
            if 2.0 * np.sqrt(2.0) * h >= 0.5 * s:
                refine = True
        return refine

    def split(self, b):
        lev = self.level[b] + 1
        i, j = self.ij[b]
        if lev > self.cfg.max_depth:
            cx, cy, _ = self.geometry([self.level[b]], [self.ij[b]])
            raise QuadtreeError(f"refinement passed depth {self.cfg.max_depth} at box centre "
                                f"({cx[0]:.6g}, {cy[0]:.6g})", (float(cx[0]), float(cy[0])))
        ijs = [(2 * i + di, 2 * j + dj) for di, dj in _CHILD_OFFSETS]
        idx, cx, cy, h, s = self.add([lev] * 4, ijs, [b] * 4)
        self.children[b] = idx.tolist()
        self.coeffs.pop(b, None)
        return idx, h, s

    def build(self):
        idx, _, _, h, s = self.add([0], [(0, 0)], [-1])
        frontier = [(int(idx[0]), float(h[0]), float(s[0]))]
        while frontier:
            nxt = []
            for b, hb, sb in frontier:
                if self.needs_refine(b, hb, sb):
                    cidx, ch, cs = self.split(b)
                    nxt.extend(zip(cidx.tolist(), ch.tolist(), cs.tolist()))
            frontier = nxt

    def balance(self) -> int:
        splits = 0
        queue = [b for b in range(len(self.level)) if not self.children[b]]
        while queue:
            b = queue.pop()
            if self.children[b]:
                continue
            lev = self.level[b]
            i, j = self.ij[b]
            n_side = 1 << lev
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    ni, nj = i + di, j + dj
                    if not (0 <= ni < n_side and 0 <= nj < n_side):
                        continue
                    m = lev
                    while (m, ni >> (lev - m), nj >> (lev - m)) not in self.keys:
                        m -= 1
                    nb = self.keys[(m, ni >> (lev - m), nj >> (lev - m))]
                    if self.children[nb] or m >= lev - 1:
                        continue
                    cidx, _, _ = self.split(nb)
                    splits += 1
                    queue.extend(cidx.tolist())
                    queue.append(b)
        return splits

    def finish(self, splits: int, vscale: float) -> TruncatedQuadtree:
        n = len(self.level)
        children = -np.ones((n, 4), dtype=np.int64)
        for b, ch in enumerate(self.children):
            if ch:
                children[b] = ch
        slot = -np.ones(n, dtype=np.int64)
        blocks = []
        for b in range(n):
            if not self.children[b] and b in self.coeffs:
                slot[b] = len(blocks)
                blocks.append(self.coeffs[b])
        coeffs = np.array(blocks) if blocks else np.zeros((0, self.n, self.n))
        return TruncatedQuadtree(self.cfg, self.center, self.root_half,
                                 np.array(self.level, dtype=np.int64), np.array(self.ij, dtype=np.int64),
                                 np.array(self.parent, dtype=np.int64), children,
                                 np.array(self.tag_g, dtype=np.int8), np.array(self.tag_f, dtype=np.int8),
                                 slot, coeffs, vscale, np.array(self.swidth), splits)


def build_truncated_tree(f: Callable, strip: StripRegion, cfg: TreeConfig | None = None,
                         balance: bool = True) -> TruncatedQuadtree:
    """Adaptive truncated quadtree for the source f (vectorized callable f(x, y)).

    Refinement: unresolved f on boxes inside Gamma; boxes meeting both the
    bulk region and the exterior; boxes meeting the strip whose diagonal is
    not below half the local strip width.  Then 2:1 balance (corner
    neighbours included).
    """
    cfg = cfg or TreeConfig()
    vscale = cfg.vscale
    if vscale is None:
        first = _Builder(f, strip, cfg, None)
        first.build()
        vscale = first.sample_max if first.sample_max > 0 else 1.0
    bld = _Builder(f, strip, cfg, vscale)
    bld.build()
    splits = bld.balance() if balance else 0
    return bld.finish(splits, vscale)


def balance_2to1(tree: TruncatedQuadtree, f: Callable, strip: StripRegion) -> TruncatedQuadtree:
    """Re-run the 2:1 ripple on an existing tree (idempotent on balanced trees)."""
    bld = _Builder(f, strip, tree.config, tree.vscale)
    bld.center, bld.root_half = tree.root_center, tree.root_half
    bld.level = tree.level.tolist()
    bld.ij = [tuple(r) for r in tree.ij.tolist()]
    bld.parent = tree.parent.tolist()
    bld.children = [[int(c) for c in row if c >= 0] for row in tree.children]
    bld.tag_g = tree.tag_gamma.tolist()
    bld.tag_f = tree.tag_fict.tolist()
    bld.swidth = tree.strip_width.tolist()
    bld.keys = {(int(l), int(i), int(j)): b for b, (l, (i, j)) in enumerate(zip(tree.level, tree.ij))}
    bld.coeffs = {int(b): tree.coeffs[tree.slot[b]] for b in np.flatnonzero(tree.slot >= 0)}
    splits = bld.balance()
    return bld.finish(tree.n_balance_splits + splits, tree.vscale)


def balance_violations(tree: TruncatedQuadtree) -> list[tuple[int, int]]:
    """Exhaustive scan: pairs of touching leaves (edge or corner) more than one level apart.

    Candidates come from a max-norm KD-tree query; touching is then decided
    exactly from centres and half-widths.
    """
    lv = tree.leaves
    c = tree.centers[lv]
    h = tree.half[lv]
    lev = tree.level[lv]
    kd = cKDTree(c)
    reach = h + h.max() + 1e-12 * tree.root_half
    out = []
    for a in range(lv.size):
        cand = np.asarray(kd.query_ball_point(c[a], reach[a], p=np.inf), dtype=int)
        gap = np.maximum(np.abs(c[cand, 0] - c[a, 0]), np.abs(c[cand, 1] - c[a, 1])) - (h[cand] + h[a])
        cand = cand[(gap <= 1e-12 * tree.root_half) & (np.abs(lev[cand] - lev[a]) > 1)]
        out.extend((int(lv[a]), int(lv[b])) for b in cand)
    return out


def strip_violations(tree: TruncatedQuadtree) -> np.ndarray:
    """Strip-touching leaves whose diagonal is not below half the local strip width."""
    lv = tree.leaves
    lv = lv[tree.touches_strip()[lv] & (tree.tag_gamma[lv] != OUTSIDE)]
    diag = 2.0 * np.sqrt(2.0) * tree.half[lv]
    return lv[diag >= 0.5 * tree.strip_width[lv]]


def dump_tree(tree: TruncatedQuadtree, path) -> Path:
    """One record per leaf: centre, half-width, level, tags, coefficient block (npz)."""
    path = Path(path)
    lv = tree.leaves
    blocks = np.zeros((lv.size, tree.config.p + 1, tree.config.p + 1))
    has = tree.slot[lv] >= 0
    blocks[has] = tree.coeffs[tree.slot[lv[has]]]
    np.savez_compressed(path, center=tree.centers[lv], half=tree.half[lv], level=tree.level[lv],
                        tag_gamma=tree.tag_gamma[lv], tag_fict=tree.tag_fict[lv],
                        contributing=has, coeffs=blocks)
    return path


def regular_tree(f: Callable, center=(0.0, 0.0), half: float = 1.0, depth: int = 0, p: int = 16,
                 refine: Callable | None = None, max_depth: int = 12) -> TruncatedQuadtree:
    """Tree without curves: every leaf contributes.

    Boxes are split down to ``depth`` and further wherever ``refine(cx, cy, h)``
    is true (up to ``max_depth``), then 2:1 balanced.  Used for oracle checks
    and standalone volume potentials.
    """
    cfg = TreeConfig(p=p, eps=1.0, max_depth=max_depth)
    bld = _Builder.__new__(_Builder)
    bld.f, bld.cfg, bld.n = f, cfg, p + 1
    bld.center, bld.root_half = (float(center[0]), float(center[1])), float(half)
    bld.level, bld.ij, bld.parent, bld.children = [], [], [], []
    bld.tag_g, bld.tag_f, bld.swidth = [], [], []
    bld.coeffs, bld.keys = {}, {}
    bld.sample_max = 0.0

    def add(level, ij, parent):
        cx, cy, h = bld.geometry(level, ij)
        idx = []
        for q in range(len(cx)):
            b = len(bld.level)
            bld.level.append(int(level[q]))
            bld.ij.append((int(ij[q][0]), int(ij[q][1])))
            bld.parent.append(int(parent[q]))
            bld.children.append([])
            bld.tag_g.append(INSIDE)
            bld.tag_f.append(INSIDE)
            bld.swidth.append(np.nan)
            bld.keys[(int(level[q]), int(ij[q][0]), int(ij[q][1]))] = b
            idx.append(b)
        X, Y = box_grid(cx, cy, h, bld.n)
        F = np.asarray(f(X, Y), dtype=float) * np.ones(X.shape)
        C = values_to_coeffs(F)
        for q, b in enumerate(idx):
            bld.coeffs[b] = C[q]
        bld.sample_max = max(bld.sample_max, float(np.abs(F).max()))
        return np.array(idx), cx, cy, h, np.full(len(cx), np.nan)

    bld.add = add
    idx, cx, cy, h, _ = add([0], [(0, 0)], [-1])
    frontier = [(int(idx[0]), float(cx[0]), float(cy[0]), float(h[0]))]
    while frontier:
        nxt = []
        for b, x, y, hb in frontier:
            lev = bld.level[b]
            if lev < depth or (refine is not None and lev < max_depth and refine(x, y, hb)):
                cidx, ccx, ccy, ch, _ = _split_plain(bld, b)
                nxt.extend(zip(cidx.tolist(), ccx.tolist(), ccy.tolist(), ch.tolist()))
        frontier = nxt
    splits = bld.balance()
    return bld.finish(splits, max(bld.sample_max, 1e-300))


def _split_plain(bld, b):
    lev = bld.level[b] + 1
    i, j = bld.ij[b]
    ijs = [(2 * i + di, 2 * j + dj) for di, dj in _CHILD_OFFSETS]
    idx, cx, cy, h, s = bld.add([lev] * 4, ijs, [b] * 4)
    bld.children[b] = idx.tolist()
    bld.coeffs.pop(b, None)
    return idx, cx, cy, h, s
