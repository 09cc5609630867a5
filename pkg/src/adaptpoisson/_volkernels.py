"""numba kernels for the log-kernel volume potential over quadtree leaves.

All sums accumulate Re sum q log(z - y) and sum q / conj(z - y); the caller
applies the 1/(2 pi) factor.  Leaf polynomials live in leaf-normalized
coordinates: P(u, v) = sum_ij C[i, j] T_j(u) T_i(v).
"""
from __future__ import annotations

import cmath
import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)
R_MOMENT = 1.3          # |z0| up to which straight-segment moments use the forward recursion
NEAR_TOUCH = 0.01       # apex may sit this fraction of a cell width outside the cell
MAX_NEAR_DEPTH = 30


@njit(cache=True)
def _cheb(x, n, out):
    out[0] = 1.0
    if n > 1:
        out[1] = x
    for k in range(2, n):
        out[k] = 2.0 * x * out[k - 1] - out[k - 2]


@njit(cache=True)
def _segment_weights(z0, tn, Vinv, ft, fw, fI, lam_log, lam_cau):
    """Weights on the nodes tn of [-1, 1] for int g log|t - z0| dt and int g / (t - z0) dt."""
    n = tn.size
    for j in range(n):
        lam_log[j] = 0.0
        lam_cau[j] = 0.0
    if abs(z0) > R_MOMENT:
        for m in range(ft.size):
            d = ft[m] - z0
            lw = fw[m] * math.log(abs(d))
            cw = fw[m] / d
            for j in range(n):
                lam_log[j] += fI[m, j] * lw
                lam_cau[j] += fI[m, j] * cw
        return
    p = np.empty(n + 1, dtype=np.complex128)
    p[0] = cmath.log(1.0 - z0) - cmath.log(-1.0 - z0)
    for k in range(n):
        p[k + 1] = z0 * p[k] + (1.0 - (-1.0) ** (k + 1)) / (k + 1)
    l1 = math.log(abs(1.0 - z0))
    l2 = math.log(abs(1.0 + z0))
    for k in range(n):
        ml = (l1 - (-1.0) ** (k + 1) * l2) / (k + 1) - p[k + 1].real / (k + 1)
        mc = p[k]
        for j in range(n):
            lam_log[j] += Vinv[k, j] * ml
            lam_cau[j] += Vinv[k, j] * mc


@njit(cache=True)
def _duffy_cell(zx, zy, x0, y0, x1, y1, C, lcx, lcy, lh,
                ul, wl, ug, wg, tn, wn, Vinv, ft, fw, fI, want_grad):
    """Exact-in-u, moment-in-s integral over one axis-aligned cell, apex at the target."""
    n = C.shape[0]
    ns = tn.size
    nu = ul.size
    cxs = (x0, x1, x1, x0)
    cys = (y0, y0, y1, y1)
    width = x1 - x0
    val = 0.0
    grad = 0.0 + 0.0j
    Ta = np.empty(n)
    Tb = np.empty(n)
    r = np.empty(n)
    Gl = np.zeros(ns)
    Gg = np.zeros(ns)
    Hg = np.zeros(ns)
    lam_log = np.empty(ns)
    lam_cau = np.empty(ns, dtype=np.complex128)
    for e in range(4):
        ax, ay = cxs[e], cys[e]
        bx, by = cxs[(e + 1) % 4], cys[(e + 1) % 4]
        D2 = (ax - zx) * (by - ay) - (ay - zy) * (bx - ax)
        if abs(D2) <= 1e-14 * width * width:
            continue
        horizontal = ay == by
        mx, my = 0.5 * (ax + bx), 0.5 * (ay + by)
        hx, hy = 0.5 * (bx - ax), 0.5 * (by - ay)
        for j in range(ns):
            Gl[j] = 0.0
            Gg[j] = 0.0
            Hg[j] = 0.0
        for which in range(2):
            for i in range(nu):
                if which == 0:
                    u = ul[i]
                    w = wl[i]
                else:
                    u = ug[i]
                    w = wg[i]
                # coordinate fixed along the edge depends on u only
                if horizontal:
                    yv = (zy + u * (ay - zy) - lcy) / lh
                    _cheb(yv, n, Ta)
                    for jj in range(n):
                        acc = 0.0
                        for ii in range(n):
                            acc += C[ii, jj] * Ta[ii]
                        r[jj] = acc
                else:
                    xv = (zx + u * (ax - zx) - lcx) / lh
                    _cheb(xv, n, Ta)
                    for ii in range(n):
                        acc = 0.0
                        for jj in range(n):
                            acc += C[ii, jj] * Ta[jj]
                        r[ii] = acc
                for j in range(ns):
                    ex = mx + tn[j] * hx
                    ey = my + tn[j] * hy
                    if horizontal:
                        _cheb((zx + u * (ex - zx) - lcx) / lh, n, Tb)
                    else:
                        _cheb((zy + u * (ey - zy) - lcy) / lh, n, Tb)
                    P = 0.0
                    for k in range(n):
                        P += r[k] * Tb[k]
                    if which == 0:
                        Gl[j] += w * u * P
                    else:
                        Gg[j] += w * u * P
                        Hg[j] += w * P
        L = math.hypot(bx - ax, by - ay)
        hc = complex(hx, hy)
        z0 = complex(zx - mx, zy - my) / hc
        _segment_weights(z0, tn, Vinv, ft, fw, fI, lam_log, lam_cau)
        s_log = 0.0
        s_plain = 0.0
        s_near = 0.0
        for j in range(ns):
            s_log += wn[j] * Gl[j]
            s_plain += wn[j] * Gg[j]
            s_near += lam_log[j] * Gg[j]
        val += D2 * 0.5 * (-s_log + math.log(0.5 * L) * s_plain + s_near)
        if want_grad:
            cau = 0.0 + 0.0j
            for j in range(ns):
                cau += lam_cau[j] * Hg[j]
            grad += -D2 * (cau / hc * 0.5).conjugate()
    return val, grad


@njit(cache=True)
def _gauss_cell(zx, zy, x0, y0, h, C, lcx, lcy, lh, gq, wq, want_grad):
    """Tensor Gauss rule on a (sub)cell of a leaf; cell centre (x0, y0), half-width h."""
    n = C.shape[0]
    nq = gq.size
    Tx = np.empty((nq, n))
    Ty = np.empty((nq, n))
    tmp = np.empty(n)
    for a in range(nq):
        _cheb((x0 + h * gq[a] - lcx) / lh, n, tmp)
        for k in range(n):
            Tx[a, k] = tmp[k]
        _cheb((y0 + h * gq[a] - lcy) / lh, n, tmp)
        for k in range(n):
            Ty[a, k] = tmp[k]
    # CT[i, b] = sum_j C[i, j] Tx[b, j]
    CT = np.empty((n, nq))
    for i in range(n):
        for b in range(nq):
            acc = 0.0
            for j in range(n):
                acc += C[i, j] * Tx[b, j]
            CT[i, b] = acc
    val = 0.0
    grad = 0.0 + 0.0j
    hh = h * h
    for a in range(nq):
        ya = y0 + h * gq[a]
        for b in range(nq):
            P = 0.0
            for i in range(n):
                P += Ty[a, i] * CT[i, b]
            q = hh * wq[a] * wq[b] * P
            dx = zx - (x0 + h * gq[b])
            dy = zy - ya
            r2 = dx * dx + dy * dy
            if r2 == 0.0:
                continue
            val += 0.5 * q * math.log(r2)
            if want_grad:
                grad += q * complex(dx, dy) / r2
    return val, grad


@njit(cache=True)
def _near_leaf(zx, zy, lcx, lcy, lh, C, gq, wq,
               ul, wl, ug, wg, tn, wn, Vinv, ft, fw, fI, want_grad):
    """Recursive 4-way subdivision toward the target; the touching cell by the Duffy rule."""
    stack_x = np.empty(4 * MAX_NEAR_DEPTH + 8)
    stack_y = np.empty(4 * MAX_NEAR_DEPTH + 8)
    stack_h = np.empty(4 * MAX_NEAR_DEPTH + 8)
    stack_d = np.empty(4 * MAX_NEAR_DEPTH + 8, dtype=np.int64)
    top = 0
    stack_x[0], stack_y[0], stack_h[0], stack_d[0] = lcx, lcy, lh, 0
    top = 1
    val = 0.0
    grad = 0.0 + 0.0j
    while top > 0:
        top -= 1
        cx, cy, h, d = stack_x[top], stack_y[top], stack_h[top], stack_d[top]
        ddx = max(abs(zx - cx) - h, 0.0)
        ddy = max(abs(zy - cy) - h, 0.0)
        dist = math.hypot(ddx, ddy)
        if dist >= 2.0 * SQRT2 * h:
            v, g = _gauss_cell(zx, zy, cx, cy, h, C, lcx, lcy, lh, gq, wq, want_grad)
        elif dist <= NEAR_TOUCH * 2.0 * h or d >= MAX_NEAR_DEPTH:
            v, g = _duffy_cell(zx, zy, cx - h, cy - h, cx + h, cy + h, C, lcx, lcy, lh,
                               ul, wl, ug, wg, tn, wn, Vinv, ft, fw, fI, want_grad)
        else:
            hh = 0.5 * h
            for (sx, sy) in ((-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)):
                stack_x[top] = cx + sx * hh
                stack_y[top] = cy + sy * hh
                stack_h[top] = hh
                stack_d[top] = d + 1
                top += 1
            continue
        val += v
        grad += g
    return val, grad


@njit(cache=True)
def _leaf_gauss_sum(zx, zy, pts, q, want_grad):
    val = 0.0
    grad = 0.0 + 0.0j
    for m in range(pts.size):
        dx = zx - pts[m].real
        dy = zy - pts[m].imag
        r2 = dx * dx + dy * dy
        val += 0.5 * q[m] * math.log(r2)
        if want_grad:
            grad += q[m] * complex(dx, dy) / r2
    return val, grad


@njit(cache=True)
def compute_multipoles(node_cx, node_cy, node_h, parent, leaf_nodes, src_pts, src_q, order):
    """Multipole coefficients of every node from the source points below it.

    mp[b, 0] = sum q,  mp[b, k] = -sum q ((y - c)/h)^k / k.
    """
    nb = node_cx.size
    mp = np.zeros((nb, order + 1), dtype=np.complex128)
    for s in range(leaf_nodes.size):
        b0 = leaf_nodes[s]
        for m in range(src_pts.shape[1]):
            y = src_pts[s, m]
            qv = src_q[s, m]
            b = b0
            while b >= 0:
                w = complex(y.real - node_cx[b], y.imag - node_cy[b]) / node_h[b]
                mp[b, 0] += qv
                pw = 1.0 + 0.0j
                for k in range(1, order + 1):
                    pw *= w
                    mp[b, k] -= qv * pw / k
                b = parent[b]
    return mp


@njit(cache=True)
def eval_tree(tx, ty, node_cx, node_cy, node_h, children, slot, has_src, mp, use_mp,
              src_pts, src_q, coeffs, gq, wq, ul, wl, ug, wg, tn, wn, Vinv, ft, fw, fI,
              want_grad, out_val, out_grad):
    order = mp.shape[1] - 1
    stack = np.empty(4 * 64 + 8, dtype=np.int64)
    for t in range(tx.size):
        zx, zy = tx[t], ty[t]
        val = 0.0
        grad = 0.0 + 0.0j
        top = 1
        stack[0] = 0
        while top > 0:
            top -= 1
            b = stack[top]
            if not has_src[b]:
                continue
            h = node_h[b]
            dcx = zx - node_cx[b]
            dcy = zy - node_cy[b]
            if use_mp and math.hypot(dcx, dcy) >= 2.0 * SQRT2 * h:
                zc = complex(dcx, dcy)
                winv = h / zc
                pw = winv
                acc = mp[b, 0] * cmath.log(zc)
                dacc = mp[b, 0] / zc
                for k in range(1, order + 1):
                    acc += mp[b, k] * pw
                    if want_grad:
                        dacc -= k * mp[b, k] * pw / zc
                    pw *= winv
                val += acc.real
                if want_grad:
                    grad += dacc.conjugate()
                continue
            if children[b, 0] >= 0:
                for c in range(4):
                    stack[top] = children[b, c]
                    top += 1
                continue
            s = slot[b]
            ddx = max(abs(dcx) - h, 0.0)
            ddy = max(abs(dcy) - h, 0.0)
            if math.hypot(ddx, ddy) >= 2.0 * SQRT2 * h:
                v, g = _leaf_gauss_sum(zx, zy, src_pts[s], src_q[s], want_grad)
            else:
                v, g = _near_leaf(zx, zy, node_cx[b], node_cy[b], h, coeffs[s], gq, wq,
                                  ul, wl, ug, wg, tn, wn, Vinv, ft, fw, fI, want_grad)
            val += v
            grad += g
        out_val[t] = val
        if want_grad:
            out_grad[t] = grad
