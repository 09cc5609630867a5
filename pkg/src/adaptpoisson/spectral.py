"""One-dimensional spectral building blocks.

Gauss-Legendre panels, Chebyshev (second-kind point) grids, barycentric
interpolation/differentiation, Legendre tail tests and a Gauss rule for the
weight -log(u) on [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from numpy.polynomial import legendre as npleg


# ---------------------------------------------------------------------------
# nodes and barycentric machinery
# ---------------------------------------------------------------------------

def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [-1, 1] (ascending nodes)."""
    x, w = npleg.leggauss(n)
    return x, w


def cheb_points(n: int) -> np.ndarray:
    """n Chebyshev points of the second kind on [-1, 1], ascending."""
    if n == 1:
        return np.zeros(1)
    return -np.cos(np.pi * np.arange(n) / (n - 1))


def bary_weights(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    scale = 4.0 / (x.max() - x.min()) if n > 1 else 1.0
    d = (x[:, None] - x[None, :]) * scale
    np.fill_diagonal(d, 1.0)
    w = 1.0 / np.prod(d, axis=1)
    return w / np.abs(w).max()


def interp_matrix(x: np.ndarray, xt: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    """Barycentric interpolation matrix from nodes ``x`` to points ``xt``."""
    x = np.asarray(x, dtype=float)
    xt = np.atleast_1d(np.asarray(xt, dtype=float))
    if w is None:
        w = bary_weights(x)
    d = xt[:, None] - x[None, :]
    exact = d == 0.0
    d[exact] = 1.0
    m = w[None, :] / d
    m /= m.sum(axis=1, keepdims=True)
    rows = np.any(exact, axis=1)
    if rows.any():
        m[rows] = exact[rows].astype(float)
    return m


def diff_matrix(x: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if w is None:
        w = bary_weights(x)
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    D = (w[None, :] / w[:, None]) / d
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def cheb_diff_matrix(n: int) -> np.ndarray:
    """Differentiation matrix on ``cheb_points(n)`` (ascending order)."""
    x = cheb_points(n)
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n)
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    D = (c[:, None] / c[None, :]) / d
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def cheb_vals2coeffs_matrix(n: int) -> np.ndarray:
    """Map values at ``cheb_points(n)`` to first-kind Chebyshev coefficients."""
    V = npcheb.chebvander(cheb_points(n), n - 1)
    return np.linalg.inv(V)


# ---------------------------------------------------------------------------
# Legendre tail test
# ---------------------------------------------------------------------------

def tail_ratio(coeffs: np.ndarray, p: int) -> float:
    """Tail ratio of 2p+1 Legendre coefficients (coeff index 0 = degree 0).

    sqrt((1/p) * sum_{deg p..2p} |c|^2 / sum_{deg 0..p-1} |c|^2).
    An all-zero head counts as resolved (ratio 0).
    """
    c2 = np.abs(np.asarray(coeffs)) ** 2
    head = c2[:p].sum()
    tail = c2[p:].sum()
    if head == 0.0:
        return 0.0
    return float(np.sqrt(tail / (p * head)))


@dataclass(frozen=True)
class SpectralKit:
    """Per-order matrices shared by all panels."""

    p: int
    t: np.ndarray = field(init=False, repr=False)
    W: np.ndarray = field(init=False, repr=False)
    D: np.ndarray = field(init=False, repr=False)
    A: np.ndarray = field(init=False, repr=False)
    leg_analysis: np.ndarray = field(init=False, repr=False)
    leg_to_cheb: np.ndarray = field(init=False, repr=False)
    endpoints: np.ndarray = field(init=False, repr=False)
    children: np.ndarray = field(init=False, repr=False)
    fine_t: np.ndarray = field(init=False, repr=False)
    fine_D: np.ndarray = field(init=False, repr=False)
    fine_analysis: np.ndarray = field(init=False, repr=False)
    bw: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = self.p
        if not (1 <= p <= 40):
            raise ValueError(f"panel order p={p} outside [1, 40]")
        t, W = gauss_legendre(p + 1)
        bw = bary_weights(t)
        D = diff_matrix(t, bw)
        set_ = object.__setattr__
        set_(self, "t", t)
        set_(self, "W", W)
        set_(self, "bw", bw)
        set_(self, "D", D)
        set_(self, "A", np.linalg.pinv(D))
        set_(self, "leg_analysis", np.linalg.inv(npleg.legvander(t, p)))
        set_(self, "leg_to_cheb", interp_matrix(t, cheb_points(p + 1), bw))
        set_(self, "endpoints", interp_matrix(t, np.array([-1.0, 1.0]), bw))
        # parent -> two children, each child's nodes in parent coordinates
        s = np.concatenate([(t - 1.0) / 2.0, (t + 1.0) / 2.0])
        set_(self, "children", interp_matrix(t, s, bw))
        # 2p+1 Legendre coefficients from a 2(p+1)-point Gauss rule on the
        # parent: exact for degree <= 2p+1 and well conditioned
        tf, Wf = gauss_legendre(2 * p + 2)
        Vf = npleg.legvander(tf, 2 * p)
        set_(self, "fine_t", tf)
        set_(self, "fine_D", diff_matrix(tf))
        set_(self, "fine_analysis",
             (Vf * Wf[:, None]).T * ((2 * np.arange(2 * p + 1) + 1) / 2.0)[:, None])

    @property
    def n(self) -> int:
        return self.p + 1

    def child_params(self) -> np.ndarray:
        """Parent coordinates of the 2(p+1) child nodes."""
        return np.concatenate([(self.t - 1.0) / 2.0, (self.t + 1.0) / 2.0])

    def interp(self, s) -> np.ndarray:
        return interp_matrix(self.t, s, self.bw)


@lru_cache(maxsize=None)
def build_spectral_kit(p: int) -> SpectralKit:
    if not (3 <= p <= 40):
        raise ValueError(f"panel order p={p} outside [3, 40]")
    return SpectralKit(p)


def resolution_check(values, kit: SpectralKit, eps: float) -> bool:
    """Legendre tail test.

    ``values`` is a callable on [-1, 1], samples at ``kit.fine_t`` (2(p+1)
    points, giving 2p+1 coefficients), or just the p+1 panel samples.  In
    the last case only p+1 coefficients exist and the upper half of them
    plays the role of the tail.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = kit.p
    if callable(values):
        vals = np.asarray(values(kit.fine_t))
    else:
        vals = np.asarray(values)
    if vals.shape[0] == 2 * (p + 1):
        coeffs = kit.fine_analysis @ vals
        return tail_ratio(coeffs, p) < eps
    if vals.shape[0] != p + 1:
        raise ValueError("expected p+1 or 2(p+1) samples")
    c = kit.leg_analysis @ vals
    h = (p + 1) // 2
    c2 = np.abs(c) ** 2
    head = c2[:h].sum()
    if head == 0.0:
        return True
    return float(np.sqrt(c2[h:].sum() / (h * head))) < eps


def tail_ratio_2d(C: np.ndarray, shells: int = 2) -> tuple[float, float]:
    """Absolute tail sizes of a 2D Chebyshev block along each direction.

    Returns (x-tail, y-tail) = l1 norms of the last ``shells`` columns/rows.
    """
    tx = np.abs(C[:, -shells:]).sum()
    ty = np.abs(C[-shells:, :]).sum()
    return float(tx), float(ty)


# ---------------------------------------------------------------------------
# Gauss rule for the weight -log(u) on [0, 1]
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def log_gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss rule for int_0^1 -log(u) g(u) du.

    Modified Chebyshev algorithm on shifted Legendre moments, then
    Golub-Welsch.
    """
    m = 2 * n
    # recurrence of monic shifted Legendre: a_k = 1/2, b_k = k^2/(4(4k^2-1))
    a = np.full(m, 0.5)
    b = np.zeros(m)
    k = np.arange(1, m)
    b[1:] = k**2 / (4.0 * (4.0 * k**2 - 1.0))
    # modified moments for the monic polynomials
    nu = np.zeros(m)
    nu[0] = 1.0
    lead = 1.0
    for j in range(1, m):
        lead *= (2 * j) * (2 * j - 1) / (j * j)  # binom(2j, j) recursively
        nu[j] = (-1.0) ** j / (j * (j + 1)) / lead
    alpha = np.zeros(n)
    beta = np.zeros(n)
    sig_prev = np.zeros(m)
    sig = nu.copy()
    alpha[0] = a[0] + nu[1] / nu[0]
    beta[0] = nu[0]
    for kk in range(1, n):
        sig_new = np.zeros(m)
        for l in range(kk, m - kk):
            sig_new[l] = (sig[l + 1] - (alpha[kk - 1] - a[l]) * sig[l]
                          - beta[kk - 1] * sig_prev[l] + b[l] * sig[l - 1])
        alpha[kk] = (a[kk] + sig_new[kk + 1] / sig_new[kk]
                     - sig[kk] / sig[kk - 1])
        beta[kk] = sig_new[kk] / sig[kk - 1]
        sig_prev, sig = sig, sig_new
    J = np.diag(alpha) + np.diag(np.sqrt(beta[1:]), 1) + np.diag(np.sqrt(beta[1:]), -1)
    x, V = np.linalg.eigh(J)
    w = beta[0] * V[0] ** 2
    return x, w


@lru_cache(maxsize=None)
def clenshaw_curtis(n: int) -> np.ndarray:
    """Quadrature weights on ``cheb_points(n)`` (integrates the interpolant)."""
    k = np.arange(n)
    mom = np.where(k % 2 == 0, 2.0 / (1.0 - k.astype(float) ** 2 + (k % 2)), 0.0)
    return cheb_vals2coeffs_matrix(n).T @ mom
