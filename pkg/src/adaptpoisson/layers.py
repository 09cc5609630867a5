"""Laplace single- and double-layer potentials on panelized curves.

Kernel convention: Phi(x, y) = (1/2pi) log(1/|x - y|), so

    S[s](x) = int Phi(x, y) s(y) ds_y,     D[t](x) = int dPhi/dn_y t(y) ds_y,

and D[1] = -1 inside, 0 outside, -1/2 on the curve.  Targets close to a
panel are handled by complex monomial recursions on that panel (Cauchy and
logarithmic integrals), with adaptive panel subdivision as the fallback.

Kinds: "single", "double" return real potentials; "single_grad" and
"double_grad" return complex gradients g_x + i g_y.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.spatial import cKDTree

from .geometry import Panelization
from .spectral import SpectralKit, build_spectral_kit, gauss_legendre, interp_matrix

_INV2PI = 1.0 / (2.0 * np.pi)
KINDS = ("single", "double", "single_grad", "double_grad")


@dataclass(frozen=True)
class CloseEvalPolicy:
    multiplier: float = 1.2        # near if distance < multiplier * panel length
    backward_radius: float = 1.6   # |z0| beyond which the Cauchy moments use backward recursion
    max_bulge: float = 0.1         # curved panels are split until their mapped bulge is below this
    max_split: int = 6
    check: bool = False            # compare every close value with the adaptive rule

    def __post_init__(self):
        if self.multiplier < 1:
            raise ValueError("close-evaluation multiplier must be >= 1")


DEFAULT_POLICY = CloseEvalPolicy()


@dataclass
class LayerDensity:
    values: np.ndarray     # (n_panel, p+1)
    layer: str             # "single" | "double"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.layer not in ("single", "double"):
            raise ValueError("layer must be 'single' or 'double'")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density has non-finite values")


def _as_values(pan, dens):
    v = dens.values if isinstance(dens, LayerDensity) else np.asarray(dens, dtype=float)
    v = np.broadcast_to(v, pan.z.shape) if v.ndim == 0 else v.reshape(pan.z.shape)
    return v


def _as_targets(targets) -> np.ndarray:
    t = np.asarray(targets)
    if np.iscomplexobj(t):
        return np.atleast_1d(t).ravel()
    t = np.atleast_2d(t.astype(float))
    if t.shape[-1] != 2:
        raise ValueError("real targets must have shape (m, 2)")
    return t[:, 0] + 1j * t[:, 1]


def _is_grad(kind):
    return kind.endswith("_grad")


# ---------------------------------------------------------------------------
# plain panel quadrature
# ---------------------------------------------------------------------------

def _weights(W, dz, f, kind):
    """Per-node quadrature factors: f ds for the single layer, f dzeta for the double."""
    if kind.startswith("single"):
        return W * np.abs(dz) * f
    return W * dz * f


def _kernel_apply(d, wq, kind, drop=None):
    """Sum over sources with d = zeta - z; coincident pairs (and ``drop``) are skipped."""
    hit = d == 0
    if drop is not None:
        hit |= drop
    anyhit = hit.any()
    if anyhit:
        d = np.where(hit, 1.0, d)
    if kind == "single":
        K = np.log(np.abs(d))
        if anyhit:
            K[hit] = 0.0
        return -_INV2PI * (K @ wq)
    K = 1.0 / d
    if kind == "double_grad":
        K = K * K
    if anyhit:
        K[hit] = 0.0
    s = K @ wq
    if kind == "double":
        return _INV2PI * np.real(1j * s)
    if kind == "single_grad":
        return np.conj(_INV2PI * s)
    return np.conj(1j * _INV2PI * s)


def _smooth_sum(pan: Panelization, dens: np.ndarray, z: np.ndarray, kind: str,
                chunk: int = 2048, near=None) -> np.ndarray:
    """Plain-rule sum over all panels.  ``near`` (per-panel target lists) names
    panels to leave out for those targets; they are skipped rather than added
    and subtracted, which would cancel catastrophically right next to a panel."""
    src = pan.z.ravel()
    wq = _weights(pan.kit.W, pan.dz, dens, kind).ravel()
    out = np.empty(z.size, dtype=complex if _is_grad(kind) else float)
    n = pan.kit.n
    pairs_t = pairs_k = None
    if near is not None:
        pairs_t = np.concatenate([idx for idx in near] + [np.zeros(0, int)]).astype(int)
        pairs_k = np.concatenate([np.full(idx.size, k) for k, idx in enumerate(near)]
                                 + [np.zeros(0, int)]).astype(int)
        order = np.argsort(pairs_t, kind="stable")
        pairs_t, pairs_k = pairs_t[order], pairs_k[order]
    for s in range(0, z.size, chunk):
        e = min(s + chunk, z.size)
        drop = None
        if pairs_t is not None and pairs_t.size:
            a, b = np.searchsorted(pairs_t, [s, e])
            if b > a:
                mask = np.zeros((e - s, pan.n_panel), dtype=bool)
                mask[pairs_t[a:b] - s, pairs_k[a:b]] = True
                drop = np.repeat(mask, n, axis=1)
        out[s:e] = _kernel_apply(src[None, :] - z[s:e, None], wq, kind, drop)
    return out


def _panel_smooth(pan, k, dens_k, z, kind):
    d = pan.z[k][None, :] - z[:, None]
    return _kernel_apply(d, _weights(pan.kit.W, pan.dz[k], dens_k, kind), kind)


# ---------------------------------------------------------------------------
# close evaluation on one panel
# ---------------------------------------------------------------------------

class _PanelFrame:
    """Panel (nodes z, parameter derivative dz) mapped so its ends sit at -1, +1."""

    def __init__(self, kit: SpectralKit, z: np.ndarray, dz: np.ndarray):
        a, b = kit.endpoints @ z
        self.c = 0.5 * (a + b)
        self.h = 0.5 * (b - a)
        self.t = (z - self.c) / self.h
        self.n = kit.n
        self.V = self.t[:, None] ** np.arange(self.n)[None, :]
        self.path = kit.leg_analysis @ self.t
        self.dpath = npleg.legder(self.path)
        self.T = dz / np.abs(dz)
        self.bulge = float(np.abs(self.t.imag).max())

    def region_sign(self, z0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(winding correction, on-path mask) for mapped targets.

        The correction is +-1 where z0 lies between the curved path and the
        segment [-1, 1] (the principal log integrates along the segment).
        """
        corr = np.zeros(z0.size)
        onp = np.zeros(z0.size, dtype=bool)
        sel = np.flatnonzero((np.abs(z0.real) < 1.0) & (np.abs(z0.imag) < 2.0 * self.bulge + 1e-12))
        if sel.size == 0:
            return corr, onp
        x = z0.real[sel]
        s = x.copy()
        for _ in range(60):
            g = npleg.legval(s, self.path).real - x
            step = g / npleg.legval(s, self.dpath).real
            s = np.clip(s - step, -1.0, 1.0)
            if np.max(np.abs(step)) < 1e-15:
                break
        y = npleg.legval(s, self.path).imag
        yi = z0.imag[sel]
        on = np.abs(yi - y) <= 1e-11 * max(self.bulge, 1.0)
        up = (y > 0) & (yi > 0) & (yi < y)
        down = (y < 0) & (yi <= 0) & (yi > y)
        corr[sel] = np.where(on, 0.0, np.where(up, -1.0, np.where(down, 1.0, 0.0)))
        onp[sel] = on
        return corr, onp

    def log_moment(self, z0: np.ndarray) -> np.ndarray:
        """p_0 = int_path dt / (t - z0); principal value for targets on the path."""
        corr, on = self.region_sign(z0)
        p = np.log(1.0 - z0) - np.log(-1.0 - z0) + 2j * np.pi * corr
        if on.any():
            zo = z0[on]
            d = 1e-10 * max(self.bulge, 1.0)
            both = np.concatenate([zo + 1j * d, zo - 1j * d])
            cb, _ = self.region_sign(both)
            pb = np.log(1.0 - both) - np.log(-1.0 - both) + 2j * np.pi * cb
            im = 0.5 * (pb[:zo.size].imag + pb[zo.size:].imag)
            p[on] = np.log(np.abs(1.0 - zo)) - np.log(np.abs(1.0 + zo)) + 1j * im
        return p

    def moments(self, z0: np.ndarray, m: int, policy: CloseEvalPolicy, second: bool = False):
        """p_k = int t^k/(t - z0) dt and (optionally) r_k = int t^k/(t - z0)^2 dt, k < m."""
        P = np.empty((z0.size, m), dtype=complex)
        R = np.empty((z0.size, m), dtype=complex) if second else None
        far = np.abs(z0) > policy.backward_radius
        nr = np.flatnonzero(~far)
        if nr.size:
            zz = z0[nr]
            kk = np.arange(m)
            mu = (1.0 - (-1.0) ** (kk + 1)) / (kk + 1)
            p = self.log_moment(zz)
            P[nr, 0] = p
            for k in range(1, m):
                p = zz * p + mu[k - 1]
                P[nr, k] = p
            if second:
                r = -1.0 / (1.0 - zz) + 1.0 / (-1.0 - zz)
                R[nr, 0] = r
                for k in range(1, m):
                    r = P[nr, k - 1] + zz * r
                    R[nr, k] = r
        fr = np.flatnonzero(far)
        if fr.size:
            zz = z0[fr]
            K = m + int(np.ceil(36.0 / np.log(np.abs(zz).min()))) + 4
            kk = np.arange(K)
            mu = (1.0 - (-1.0) ** (kk + 1)) / (kk + 1)
            pall = np.empty((zz.size, K), dtype=complex)
            p = np.zeros(zz.size, dtype=complex)
            for k in range(K - 1, -1, -1):
                p = (p - mu[k]) / zz
                pall[:, k] = p
            P[fr] = pall[:, :m]
            if second:
                r = np.zeros(zz.size, dtype=complex)
                for k in range(K - 2, -1, -1):
                    r = (r - pall[:, k]) / zz
                    if k < m:
                        R[fr, k] = r
        return P, R

    def integrals(self, f: np.ndarray, z: np.ndarray, kind: str, policy: CloseEvalPolicy) -> np.ndarray:
        z0 = (z - self.c) / self.h
        n = self.n
        if kind == "double":
            coef = np.linalg.solve(self.V, f.astype(complex))
            P, _ = self.moments(z0, n, policy)
            return np.real(1j * _INV2PI * (P @ coef))
        if kind == "double_grad":
            coef = np.linalg.solve(self.V, f.astype(complex))
            _, R = self.moments(z0, n, policy, second=True)
            return np.conj(1j * _INV2PI * (R @ coef) / self.h)
        # single layer: s ds = (s / T) dzeta
        coef = np.linalg.solve(self.V, f / self.T)
        if kind == "single_grad":
            P, _ = self.moments(z0, n, policy)
            return np.conj(_INV2PI * (P @ coef))
        P, _ = self.moments(z0, n + 1, policy)
        # int t^k log(t - z0) dt by parts, with the branch continuous along the path
        L0 = np.log(-1.0 - z0)
        L1 = L0 + P[:, 0]
        k = np.arange(n)
        Q = ((L1[:, None] - ((-1.0) ** (k + 1))[None, :] * L0[:, None]) - P[:, 1:n + 1]) / (k + 1)[None, :]
        mu = (1.0 - (-1.0) ** (k + 1)) / (k + 1)
        integral = self.h * (np.log(self.h) * (mu @ coef) + Q @ coef)
        return -_INV2PI * np.real(integral)


def _dist_nodes(kit, z_nodes, z, m: int = 64):
    pts = kit.interp(np.linspace(-1, 1, m)) @ z_nodes
    return np.abs(pts[None, :] - z[:, None]).min(axis=1)


def _split_matrices(kit: SpectralKit):
    return _split_for_order(kit.p)


@lru_cache(maxsize=None)
def _split_for_order(p: int):
    """Interpolation onto two sub-panels.  The cut sits between the two middle
    nodes so no node of the parent becomes a sub-panel endpoint."""
    kit = build_spectral_kit(p)
    m = kit.n // 2
    cut = 0.5 * (kit.t[m - 1] + kit.t[m]) if kit.n % 2 == 0 else 0.5 * (kit.t[m] + kit.t[m + 1])
    left = -1.0 + (kit.t + 1.0) * (cut + 1.0) / 2.0
    right = cut + (kit.t + 1.0) * (1.0 - cut) / 2.0
    return ((kit.interp(left), (cut + 1.0) / 2.0), (kit.interp(right), (1.0 - cut) / 2.0))


def _close_sum(kit, zn, dzn, f, z, kind, policy, depth=0):
    fr = _PanelFrame(kit, zn, dzn)
    if fr.bulge <= policy.max_bulge or depth >= policy.max_split:
        return fr.integrals(f, z, kind, policy)
    # strongly curved: recurse on the two parameter halves
    out = np.zeros(z.size, dtype=complex if _is_grad(kind) else float)
    for M, scale in _split_matrices(kit):
        zh, dzh, fh = M @ zn, scale * (M @ dzn), M @ f
        length = np.sum(kit.W * np.abs(dzh))
        near = _dist_nodes(kit, zh, z) < policy.multiplier * length
        if near.any():
            out[near] += _close_sum(kit, zh, dzh, fh, z[near], kind, policy, depth + 1)
        if (~near).any():
            out[~near] += _kernel_apply(zh[None, :] - z[~near, None], _weights(kit.W, dzh, fh, kind), kind)
    return out


def close_eval_panel(pan: Panelization, k: int, dens_k, layer: str, targets,
                     policy: CloseEvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Layer potential of panel k alone, accurate for targets near (or on) the panel."""
    if layer not in KINDS:
        raise ValueError(f"unknown layer kind {layer!r}")
    z = _as_targets(targets)
    dens_k = np.asarray(dens_k, dtype=float)
    out = _close_sum(pan.kit, pan.z[k], pan.dz[k], dens_k, z, layer, policy)
    if policy.check:
        off = np.flatnonzero(_dist_nodes(pan.kit, pan.z[k], z) > 0)
        if off.size:
            ref = adaptive_panel_eval(pan, k, dens_k, layer, z[off])
            bad = np.abs(out[off] - ref) > 1e-9 * max(1.0, np.abs(ref).max())
            out[off[bad]] = ref[bad]
    return out


# ---------------------------------------------------------------------------
# adaptive subdivision (fallback and oracle)
# ---------------------------------------------------------------------------

def adaptive_panel_eval(pan: Panelization, k: int, dens_k, layer: str, targets,
                        multiplier: float = 1.2, n_sub: int | None = None,
                        max_depth: int = 60) -> np.ndarray:
    """Panel-k potential by recursive bisection in the panel parameter.

    Sub-intervals are split until the target is ``multiplier`` sub-lengths
    away; the density and the geometry are the panel's degree-p interpolants.
    """
    kit = pan.kit
    z = _as_targets(targets)
    n_sub = n_sub or 2 * kit.n
    ts, ws = gauss_legendre(n_sub)
    dens_k = np.asarray(dens_k, dtype=float)
    zk, dzk = pan.z[k], pan.dz[k]
    out = np.zeros(z.size, dtype=complex if _is_grad(layer) else float)
    for q, zq in enumerate(z):
        stack = [(-1.0, 1.0, 0)]
        acc = 0.0
        while stack:
            a, b, depth = stack.pop()
            s = 0.5 * (a + b) + 0.5 * (b - a) * ts
            M = interp_matrix(kit.t, s, kit.bw)
            zs = M @ zk
            dzs = 0.5 * (b - a) * (M @ dzk)
            if np.abs(zs - zq).min() < multiplier * np.sum(ws * np.abs(dzs)) and depth < max_depth:
                m = 0.5 * (a + b)
                stack.append((a, m, depth + 1))
                stack.append((m, b, depth + 1))
                continue
            wq = _weights(ws, dzs, M @ dens_k, layer)
            acc = acc + _kernel_apply((zs - zq)[None, :], wq, layer)[0]
        out[q] = acc
    return out


# ---------------------------------------------------------------------------
# global evaluators
# ---------------------------------------------------------------------------

def _near_lists(pan: Panelization, z: np.ndarray, multiplier: float):
    """For each panel, indices of targets within multiplier * length of it."""
    if z.size == 0:
        return [np.empty(0, dtype=int)] * pan.n_panel
    tree = cKDTree(np.column_stack([z.real, z.imag]))
    centers = pan.z[:, pan.kit.n // 2]
    radius = np.abs(pan.z - centers[:, None]).max(axis=1)
    radius = np.maximum(radius, np.abs(pan.ends - centers[:, None]).max(axis=1))
    out = []
    for k in range(pan.n_panel):
        cand = np.asarray(tree.query_ball_point([centers[k].real, centers[k].imag],
                                                radius[k] + multiplier * pan.length[k]), dtype=int)
        if cand.size:
            d = _dist_nodes(pan.kit, pan.z[k], z[cand])
            cand = cand[d < multiplier * pan.length[k]]
        out.append(np.sort(cand))
    return out


def layer_eval(pan: Panelization, dens, targets, layer: str,
               policy: CloseEvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    if layer not in KINDS:
        raise ValueError(f"unknown layer kind {layer!r}")
    z = _as_targets(targets)
    f = _as_values(pan, dens)
    near = _near_lists(pan, z, policy.multiplier)
    out = _smooth_sum(pan, f, z, layer, near=near)
    for k, idx in enumerate(near):
        if idx.size:
            out[idx] += close_eval_panel(pan, k, f[k], layer, z[idx], policy)
    return out


def slp_eval(pan: Panelization, sigma, targets, policy: CloseEvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Single-layer potential S[sigma] at targets (complex array or (m, 2))."""
    return layer_eval(pan, sigma, targets, "single", policy)


def dlp_eval(pan: Panelization, tau, targets, policy: CloseEvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Double-layer potential D[tau]; on-curve targets give the principal value."""
    return layer_eval(pan, tau, targets, "double", policy)


def slp_grad(pan: Panelization, sigma, targets, policy: CloseEvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Gradient of S[sigma] as complex g_x + i g_y (off the curve)."""
    return layer_eval(pan, sigma, targets, "single_grad", policy)


def dlp_grad(pan: Panelization, tau, targets, policy: CloseEvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    return layer_eval(pan, tau, targets, "double_grad", policy)


def dlp_matrix(pan: Panelization) -> np.ndarray:
    """Nystrom matrix of the on-curve double layer (no identity term)."""
    z = pan.z.ravel()
    wq = (pan.dz * pan.kit.W[None, :]).ravel()
    d = z[None, :] - z[:, None]
    np.fill_diagonal(d, 1.0)
    K = _INV2PI * np.real(1j * wq[None, :] / d)
    np.fill_diagonal(K, -pan.curvature.ravel() * pan.weights.ravel() / (4.0 * np.pi))
    return K


def dlp_on_curve(pan: Panelization, tau) -> np.ndarray:
    """Principal-value D[tau] at the panel nodes (smooth kernel + curvature limit)."""
    return dlp_matrix(pan) @ _as_values(pan, tau).ravel()


# ---------------------------------------------------------------------------
# gluing
# ---------------------------------------------------------------------------

def compute_jumps(strip_values_fict: np.ndarray, strip_dn_fict: np.ndarray,
                  bulk_values: np.ndarray, bulk_gradient: np.ndarray,
                  normal: np.ndarray) -> tuple[LayerDensity, LayerDensity]:
    """tau = v_bulk - v_strip and sigma = d_n v_bulk - d_n v_strip on the fictitious curve.

    ``bulk_gradient`` is complex (v_x + i v_y); ``normal`` the outward normal
    of the bulk region at the same nodes.
    """
    bv = np.asarray(bulk_values).reshape(normal.shape)
    bg = np.asarray(bulk_gradient).reshape(normal.shape)
    dn_bulk = bg.real * normal.real + bg.imag * normal.imag
    tau = bv - np.asarray(strip_values_fict).reshape(normal.shape)
    sigma = dn_bulk - np.asarray(strip_dn_fict).reshape(normal.shape)
    return LayerDensity(tau, "double"), LayerDensity(sigma, "single")


def v_glue_eval(tau, sigma, fict: Panelization, targets,
                policy: CloseEvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """D[tau] - S[sigma] over the fictitious curve.

    Its value jump (strip side minus bulk side) is +tau and its normal
    derivative jump is +sigma, which cancels the mismatch between the bulk
    and strip particular solutions.
    """
    return dlp_eval(fict, tau, targets, policy) - slp_eval(fict, sigma, targets, policy)


def v_glue_grad(tau, sigma, fict: Panelization, targets,
                policy: CloseEvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    return dlp_grad(fict, tau, targets, policy) - slp_grad(fict, sigma, targets, policy)
