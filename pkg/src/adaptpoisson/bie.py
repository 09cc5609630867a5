"""Interior Dirichlet Laplace problem by a second-kind double-layer equation.

w = D[mu] inside the curve, with (-1/2) mu + D[mu] = g on the curve.  The
Nystrom matrix uses plain panel quadrature, the curvature limit on the
diagonal and close-evaluation blocks for non-adjacent panels that come
within the activation distance of each other.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Panelization
from .layers import (DEFAULT_POLICY, CloseEvalPolicy, LayerDensity, _near_lists,
                     close_eval_panel, dlp_eval, dlp_matrix)


class BIEConvergenceError(RuntimeError):
    def __init__(self, msg: str, history: list[float]):
        super().__init__(msg)
        self.history = history


class OutsideDomainError(ValueError):
    def __init__(self, msg: str, mask: np.ndarray):
        super().__init__(msg)
        self.mask = mask


@dataclass
class NystromSystem:
    pan: Panelization
    matrix: np.ndarray          # -(1/2) I + D, dense
    n_close_blocks: int = 0

    def apply(self, mu: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(mu, dtype=float).ravel()

    def rowsum_defect(self) -> float:
        """max |A 1 + 1|; zero for an exact discretization."""
        return float(np.abs(self.matrix.sum(axis=1) + 1.0).max())

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def assemble_nystrom(pan: Panelization, close: CloseEvalPolicy = DEFAULT_POLICY) -> NystromSystem:
    K = dlp_matrix(pan)
    n = pan.kit.n
    z = pan.z.ravel()
    owner = np.repeat(np.arange(pan.n_panel), n)
    eye = np.eye(n)
    blocks = 0
    for k, idx in enumerate(_near_lists(pan, z, close.multiplier)):
        gap = np.abs(owner[idx] - k)
        gap = np.minimum(gap, pan.n_panel - gap)
        idx = idx[gap > 1]
        if idx.size == 0:
            continue
        zi = z[idx]
        for j in range(n):
            K[idx, k * n + j] = close_eval_panel(pan, k, eye[j], "double", zi, close)
        blocks += 1
    K -= 0.5 * np.eye(K.shape[0])
    return NystromSystem(pan, K, blocks)


@dataclass
class GMRESResult:
    x: np.ndarray
    iterations: int
    history: list[float] = field(default_factory=list)   # relative residual after each step
    converged: bool = True


def gmres(apply, b: np.ndarray, tol: float = 1e-12, max_iter: int = 200,
          reorthogonalize: bool = True) -> GMRESResult:
    """Unrestarted GMRES from a zero guess: modified Gram-Schmidt Arnoldi, Givens QR."""
    b = np.asarray(b, dtype=float).ravel()
    beta = np.linalg.norm(b)
    if beta == 0.0:
        return GMRESResult(np.zeros_like(b), 0, [0.0])
    m = min(max_iter, b.size)
    V = np.zeros((m + 1, b.size))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = b / beta
    history = [1.0]
    k = 0
    for k in range(m):
        w = np.asarray(apply(V[k]), dtype=float)
        for _ in range(2 if reorthogonalize else 1):
            for i in range(k + 1):
                h = V[i] @ w
                H[i, k] += h
                w = w - h * V[i]
        H[k + 1, k] = np.linalg.norm(w)
        breakdown = H[k + 1, k] <= 1e-14 * np.abs(H[: k + 1, k]).max()
        if not breakdown:
            V[k + 1] = w / H[k + 1, k]
        for i in range(k):
            a, c = H[i, k], H[i + 1, k]
            H[i, k] = cs[i] * a + sn[i] * c
            H[i + 1, k] = -sn[i] * a + cs[i] * c
        r = np.hypot(H[k, k], H[k + 1, k])
        cs[k], sn[k] = (1.0, 0.0) if r == 0 else (H[k, k] / r, H[k + 1, k] / r)
        H[k, k] = r
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        history.append(abs(g[k + 1]) / beta)
        if history[-1] <= tol or breakdown:
            break
    n_it = k + 1
    y = np.linalg.solve(np.triu(H[:n_it, :n_it]), g[:n_it]) if n_it else np.zeros(0)
    x = V[:n_it].T @ y
    return GMRESResult(x, n_it, history, history[-1] <= tol)


def solve_bie(system: NystromSystem, rhs, tol: float = 1e-12, max_iter: int = 200) -> tuple[LayerDensity, GMRESResult]:
    b = np.asarray(rhs, dtype=float).ravel()
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side has non-finite entries")
    res = gmres(system.apply, b, tol=tol, max_iter=max_iter)
    if not res.converged:
        raise BIEConvergenceError(
            f"GMRES stalled at relative residual {res.history[-1]:.3e} after {res.iterations} steps",
            res.history)
    return LayerDensity(res.x.reshape(system.pan.z.shape), "double"), res


def inside_mask(pan: Panelization, targets, policy: CloseEvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Interior indicator from the Gauss identity D[1] = -1 inside, 0 outside."""
    return dlp_eval(pan, 1.0, targets, policy) < -0.5


def eval_homogeneous(pan: Panelization, mu, targets, policy: CloseEvalPolicy = DEFAULT_POLICY,
                     check_inside: bool = True) -> np.ndarray:
    """w = D[mu] at interior targets.  Targets outside the curve are refused."""
    if check_inside:
        mask = inside_mask(pan, targets, policy)
        if not mask.all():
            raise OutsideDomainError(f"{int((~mask).sum())} targets outside the domain", ~mask)
    return dlp_eval(pan, mu, targets, policy)
