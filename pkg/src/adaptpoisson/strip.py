"""Spectral-element solver on the boundary strip.

One curvilinear element per boundary panel: Chebyshev points along the
panel (xi) and across the strip (eta, -1 on the boundary, +1 on the
fictitious curve).  Neighbouring elements share a straight interface where
value continuity is imposed from one side and flux continuity from the other.
The global matrix is periodic block tridiagonal; it is factored with a block
Thomas sweep and the two wrap-around blocks are added back with Woodbury.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numpy.polynomial import chebyshev as npcheb
from scipy.spatial import cKDTree

from .spectral import (SpectralKit, cheb_diff_matrix, cheb_points, cheb_vals2coeffs_matrix,
                       clenshaw_curtis, interp_matrix, tail_ratio_2d)
from .strip_geometry import StripRegion


class StripMeshError(RuntimeError):
    def __init__(self, msg: str, element: int):
        super().__init__(msg)
        self.element = element


def default_radial_order(p: int) -> int:
    """p_r with p_r + 1 = ceil(1.5 (p + 1))."""
    return math.ceil(1.5 * (p + 1)) - 1


@dataclass(frozen=True)
class MeshKit:
    n_xi: int
    n_eta: int
    xi: np.ndarray = field(init=False, repr=False)
    eta: np.ndarray = field(init=False, repr=False)
    dxi: np.ndarray = field(init=False, repr=False)
    deta: np.ndarray = field(init=False, repr=False)
    wxi: np.ndarray = field(init=False, repr=False)
    weta: np.ndarray = field(init=False, repr=False)
    c_xi: np.ndarray = field(init=False, repr=False)     # values -> coefficients
    c_eta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s = object.__setattr__
        s(self, "xi", cheb_points(self.n_xi))
        s(self, "eta", cheb_points(self.n_eta))
        s(self, "dxi", cheb_diff_matrix(self.n_xi))
        s(self, "deta", cheb_diff_matrix(self.n_eta))
        s(self, "wxi", clenshaw_curtis(self.n_xi))
        s(self, "weta", clenshaw_curtis(self.n_eta))
        s(self, "c_xi", cheb_vals2coeffs_matrix(self.n_xi))
        s(self, "c_eta", cheb_vals2coeffs_matrix(self.n_eta))

    @property
    def N(self) -> int:
        return self.n_xi * self.n_eta

    def flat(self, i, j):
        return np.asarray(i) * self.n_xi + np.asarray(j)

    @property
    def side_gamma(self) -> np.ndarray:
        return self.flat(0, np.arange(self.n_xi))

    @property
    def side_fict(self) -> np.ndarray:
        return self.flat(self.n_eta - 1, np.arange(self.n_xi))

    @property
    def side_left(self) -> np.ndarray:
        """Interface nodes at xi = -1, corners excluded."""
        return self.flat(np.arange(1, self.n_eta - 1), 0)

    @property
    def side_right(self) -> np.ndarray:
        return self.flat(np.arange(1, self.n_eta - 1), self.n_xi - 1)

    @property
    def interior(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(1, self.n_eta - 1), np.arange(1, self.n_xi - 1), indexing="ij")
        return self.flat(i, j).ravel()


@lru_cache(maxsize=None)
def mesh_kit(n_xi: int, n_eta: int) -> MeshKit:
    return MeshKit(n_xi, n_eta)


@dataclass
class StripElement:
    index: int
    Z: np.ndarray          # (n_eta, n_xi) complex node positions
    Z_xi: np.ndarray
    Z_eta: np.ndarray
    J: np.ndarray
    ax: np.ndarray         # d xi / dx
    ay: np.ndarray         # d xi / dy
    bx: np.ndarray         # d eta / dx
    by: np.ndarray         # d eta / dy
    n_left: complex        # unit normal of the xi=-1 interface, pointing towards +xi
    n_right: complex
    scale: float           # typical width, used for row scaling
    xc: np.ndarray         # boundary curve at Chebyshev xi points
    xtc: np.ndarray        # fictitious curve at Chebyshev xi points

    @property
    def X(self):
        return self.Z.real

    @property
    def Y(self):
        return self.Z.imag

    def area(self, mk: MeshKit) -> float:
        return float(mk.weta @ self.J @ mk.wxi)

    # -- differentiation on grids of shape (n_eta, n_xi) --------------------
    def dx(self, v, mk: MeshKit):
        return self.ax * (v @ mk.dxi.T) + self.bx * (mk.deta @ v)

    def dy(self, v, mk: MeshKit):
        return self.ay * (v @ mk.dxi.T) + self.by * (mk.deta @ v)

    def laplacian_apply(self, v, mk: MeshKit):
        return self.dx(self.dx(v, mk), mk) + self.dy(self.dy(v, mk), mk)

    # -- dense operators ----------------------------------------------------
    def grad_rows(self, nodes: np.ndarray, nvec: complex, mk: MeshKit) -> np.ndarray:
        """Rows of the directional derivative nvec . grad at flat ``nodes``."""
        ne, nx = mk.n_eta, mk.n_xi
        i, j = np.divmod(np.asarray(nodes), nx)
        a = nvec.real * self.ax[i, j] + nvec.imag * self.ay[i, j]
        b = nvec.real * self.bx[i, j] + nvec.imag * self.by[i, j]
        rows = np.zeros((len(nodes), ne, nx))
        r = np.arange(len(nodes))
        rows[r, i, :] += a[:, None] * mk.dxi[j]
        rows[r, :, j] += b[:, None] * mk.deta[i]
        return rows.reshape(len(nodes), -1)

    def dx_matrix(self, mk: MeshKit) -> np.ndarray:
        return _first_derivative(self.ax, self.bx, mk)

    def dy_matrix(self, mk: MeshKit) -> np.ndarray:
        return _first_derivative(self.ay, self.by, mk)

    def laplacian_matrix(self, mk: MeshKit) -> np.ndarray:
        """D_X^2 + D_Y^2 formed from the tensor structure (no N^3 products)."""
        d, e = mk.dxi, mk.deta
        ne, nx = mk.n_eta, mk.n_xi
        L = np.zeros((ne, nx, ne, nx))
        # xi-xi part: block diagonal in eta
        blk = np.zeros((ne, nx, nx))
        for c in (self.ax, self.ay):
            blk += np.einsum("ij,jm,im,mk->ijk", c, d, c, d, optimize=True)
        ii = np.arange(ne)
        L[ii, :, ii, :] += blk
        # eta-eta part: block diagonal in xi
        blk = np.zeros((nx, ne, ne))
        for c in (self.bx, self.by):
            blk += np.einsum("ij,im,mj,mk->jik", c, e, c, e, optimize=True)
        jj = np.arange(nx)
        L[:, jj, :, jj] += blk
        # mixed parts
        Q2 = (self.ax[:, :, None] * self.bx[:, None, :] + self.ay[:, :, None] * self.by[:, None, :])
        L += np.einsum("ik,jl,ijl->ijkl", e, d, Q2, optimize=True)
        Q3 = (self.bx[:, :, None] * self.ax.T[None, :, :] + self.by[:, :, None] * self.ay.T[None, :, :])
        L += np.einsum("ik,jl,ijk->ijkl", e, d, Q3, optimize=True)
        return L.reshape(ne * nx, ne * nx)


def _first_derivative(a, b, mk: MeshKit) -> np.ndarray:
    ne, nx = mk.n_eta, mk.n_xi
    M = np.einsum("ij,ik,jl->ijkl", a, np.eye(ne), mk.dxi)
    M += np.einsum("ij,ik,jl->ijkl", b, mk.deta, np.eye(nx))
    return M.reshape(ne * nx, ne * nx)


def _matched_ends(zc: np.ndarray) -> np.ndarray:
    """Replace each junction's two extrapolated end values by their mean."""
    zc = zc.copy()
    mid = 0.5 * (zc[:, -1] + np.roll(zc[:, 0], -1))
    zc[:, -1] = mid
    zc[:, 0] = np.roll(mid, 1)
    return zc


def build_strip_mesh(strip: StripRegion, kit: SpectralKit | None = None,
                     p_r: int | None = None) -> tuple[list[StripElement], MeshKit]:
    """Curvilinear tensor elements, one per panel of the strip."""
    outer, inner = strip.outer, strip.inner
    kit = kit or outer.kit
    if p_r is None:
        p_r = default_radial_order(kit.p)
    if p_r < kit.p:
        raise ValueError(f"radial order {p_r} below panel order {kit.p}")
    mk = mesh_kit(kit.n, p_r + 1)
    xc_all = _matched_ends(outer.z @ kit.leg_to_cheb.T)
    xtc_all = _matched_ends(inner.z @ kit.leg_to_cheb.T)
    r = mk.eta[:, None]
    elems = []
    for k in range(outer.n_panel):
        xc, xtc = xc_all[k], xtc_all[k]
        Z = 0.5 * (1 + r) * xtc[None, :] + 0.5 * (1 - r) * xc[None, :]
        Zx = Z @ mk.dxi.T
        Ze = mk.deta @ Z
        J = np.imag(np.conj(Zx) * Ze)
        if not np.all(J > 0):
            raise StripMeshError(f"nonpositive Jacobian on strip element {k} "
                                 f"(min {J.min():.3e}); strip too wide or kinked", k)
        seg_l = xtc[0] - xc[0]
        seg_r = xtc[-1] - xc[-1]
        elems.append(StripElement(
            index=k, Z=Z, Z_xi=Zx, Z_eta=Ze, J=J,
            ax=Ze.imag / J, ay=-Ze.real / J, bx=-Zx.imag / J, by=Zx.real / J,
            n_left=-1j * seg_l / abs(seg_l), n_right=-1j * seg_r / abs(seg_r),
            scale=float(np.mean(np.abs(xtc - xc))), xc=xc, xtc=xtc))
    return elems, mk


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _grid_values(data, elems, mk, what):
    """Evaluate ``data`` (callable of x, y / array / scalar / None) on all element grids."""
    n = len(elems)
    shape = (n, mk.n_eta, mk.n_xi)
    if data is None:
        return np.zeros(shape)
    if callable(data):
        Z = np.stack([e.Z for e in elems])
        out = np.asarray(data(Z.real, Z.imag), dtype=float)
        return np.broadcast_to(out, shape).copy()
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 0:
        return np.full(shape, float(arr))
    if arr.shape != shape:
        raise ValueError(f"{what} samples must have shape {shape}")
    return arr.copy()


@dataclass
class StripSystem:
    elems: list
    mk: MeshKit
    rhs: np.ndarray                        # (n_panel, N)
    lap_scale: np.ndarray                  # (n_panel, N) row equilibration of PDE rows
    flux_scale: np.ndarray                 # (n_panel, n_eta - 2) same for flux rows
    _factor: dict | None = field(default=None, repr=False)

    @property
    def n_panel(self) -> int:
        return len(self.elems)

    @property
    def n_unknowns(self) -> int:
        return self.n_panel * self.mk.N

    # -- blocks --------------------------------------------------------------
    def diag_block(self, k: int) -> np.ndarray:
        el, mk = self.elems[k], self.mk
        sL, sF = self.lap_scale[k], self.flux_scale[k]
        A = sL[:, None] * el.laplacian_matrix(mk)
        for side in (mk.side_gamma, mk.side_fict):
            A[side] = 0.0
            A[side, side] = 1.0
        R = mk.side_right
        A[R] = 0.0
        A[R, R] = 1.0
        Lf = mk.side_left
        A[Lf] = -sF[:, None] * el.grad_rows(Lf, el.n_left, mk)
        return A

    def upper_sub(self) -> np.ndarray:
        """Nonzero part of the coupling k -> k+1: rows ``right`` of k, cols ``left`` of k+1."""
        return -np.eye(self.mk.n_eta - 2)

    def lower_rows(self, k: int) -> np.ndarray:
        """Coupling k -> k-1: rows ``left`` of k (full columns of element k-1)."""
        km = (k - 1) % self.n_panel
        nvec = self.elems[k].n_left
        return self.flux_scale[k][:, None] * self.elems[km].grad_rows(self.mk.side_right, nvec, self.mk)

    def to_sparse(self) -> sp.csr_matrix:
        n, N, mk = self.n_panel, self.mk.N, self.mk
        rows, cols, vals = [], [], []

        def put(blk, r0, c0, ridx=None, cidx=None):
            b = sp.coo_matrix(blk)
            rr = b.row if ridx is None else ridx[b.row]
            cc = b.col if cidx is None else cidx[b.col]
            rows.append(rr + r0)
            cols.append(cc + c0)
            vals.append(b.data)

        for k in range(n):
            put(self.diag_block(k), k * N, k * N)
            kp, km = (k + 1) % n, (k - 1) % n
            put(self.upper_sub(), k * N, kp * N, mk.side_right, mk.side_left)
            put(self.lower_rows(k), k * N, km * N, mk.side_left, None)
        M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n * N, n * N))
        return M.tocsr()

    def matvec(self, v: np.ndarray) -> np.ndarray:
        n, mk = self.n_panel, self.mk
        v = v.reshape(n, mk.N)
        out = np.empty_like(v)
        for k in range(n):
            y = self.diag_block(k) @ v[k]
            y[mk.side_right] -= v[(k + 1) % n][mk.side_left]
            y[mk.side_left] += self.lower_rows(k) @ v[(k - 1) % n]
            out[k] = y
        return out.ravel()

    # -- periodic block Thomas + Woodbury -----------------------------------
    def factor(self) -> dict:
        if self._factor is not None:
            return self._factor
        n, mk = self.n_panel, self.mk
        if n < 3:
            lu = sla.lu_factor(self.to_sparse().toarray())
            self._factor = {"dense": lu}
            return self._factor
        L, R = mk.side_left, mk.side_right
        lus, lows = [], []
        Zprev = None
        for k in range(n):
            A = self.diag_block(k)
            C = self.lower_rows(k)
            lows.append(C)
            if k > 0:
                # S_k = A_k - C_k S_{k-1}^{-1} B_{k-1};  B = -I on (R of k-1, L of k)
                A[np.ix_(L, L)] += C @ Zprev
            try:
                lu = sla.lu_factor(A, check_finite=False)
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise StripMeshError(f"singular diagonal block at strip element {k}", k) from exc
            if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0.0:
                raise StripMeshError(f"singular diagonal block at strip element {k}", k)
            lus.append(lu)
            E = np.zeros((mk.N, len(R)))
            E[R, np.arange(len(R))] = 1.0
            Zprev = sla.lu_solve(lu, E, check_finite=False)
        self._factor = {"lu": lus, "low": lows}
        # Woodbury pieces for the two wrap-around blocks
        m = len(L)
        U = np.zeros((n, mk.N, 2 * m))
        U[0, L, np.arange(m)] = 1.0                    # C_0 lives in rows L of element 0
        U[n - 1, R, m + np.arange(m)] = 1.0            # B_{n-1} lives in rows R of element n-1
        Zc = self._tri_solve(U)
        cap = np.eye(2 * m) + self._wt(Zc)
        self._factor["Zc"] = Zc
        self._factor["cap"] = sla.lu_factor(cap)
        return self._factor

    def _wt(self, x: np.ndarray) -> np.ndarray:
        """W^T x for the corner correction; x has shape (n, N, ...)."""
        L = self.mk.side_left
        C0 = self._factor["low"][0]
        return np.concatenate([np.tensordot(C0, x[-1], axes=(1, 0)), -x[0][L]], axis=0)

    def _tri_solve(self, r: np.ndarray) -> np.ndarray:
        """Solve the non-periodic block tridiagonal part; r has shape (n, N, m)."""
        f = self._factor
        n, mk = self.n_panel, self.mk
        L, R = mk.side_left, mk.side_right
        y = np.array(r, dtype=float, copy=True)
        w_prev = None
        for k in range(n):
            if k > 0:
                y[k][L] -= f["low"][k] @ w_prev
            w_prev = sla.lu_solve(f["lu"][k], y[k], check_finite=False)
        v = np.empty_like(y)
        v[n - 1] = w_prev
        for k in range(n - 2, -1, -1):
            yk = y[k]
            yk[R] += v[k + 1][L]
            v[k] = sla.lu_solve(f["lu"][k], yk, check_finite=False)
        return v

    def solve(self, rhs: np.ndarray | None = None) -> np.ndarray:
        """Solution as grids of shape (n_panel, n_eta, n_xi)."""
        f = self.factor()
        n, mk = self.n_panel, self.mk
        b = self.rhs if rhs is None else np.asarray(rhs, dtype=float).reshape(n, mk.N)
        if "dense" in f:
            x = sla.lu_solve(f["dense"], b.ravel())
            return x.reshape(n, mk.n_eta, mk.n_xi)
        x0 = self._tri_solve(b[:, :, None])
        corr = sla.lu_solve(f["cap"], self._wt(x0))
        x = x0 - np.tensordot(f["Zc"], corr, axes=(2, 0))
        return x[:, :, 0].reshape(n, mk.n_eta, mk.n_xi)

    def solve_dense(self) -> np.ndarray:
        """Oracle: direct solve of the assembled matrix."""
        n, mk = self.n_panel, self.mk
        M = self.to_sparse()
        if M.shape[0] <= 12000:
            x = np.linalg.solve(M.toarray(), self.rhs.ravel())
        else:
            import scipy.sparse.linalg as spla
            x = spla.spsolve(M.tocsc(), self.rhs.ravel())
        return x.reshape(n, mk.n_eta, mk.n_xi)

    def residual(self, v: np.ndarray) -> float:
        """Relative residual ||M v - b|| / ||b|| (absolute when b = 0)."""
        r = self.matvec(np.ravel(v)) - self.rhs.ravel()
        nb = np.linalg.norm(self.rhs)
        return float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))


def assemble_strip_system(elems: list[StripElement], mk: MeshKit, f=None,
                          dirichlet=None) -> StripSystem:
    """Rows: Laplacian at interior nodes, Dirichlet on both curved sides,
    continuity on each element's right interface, flux on its left one."""
    F = _grid_values(f, elems, mk, "f")
    G = _grid_values(dirichlet, elems, mk, "dirichlet")
    n = len(elems)
    rhs = np.zeros((n, mk.N))
    lap_scale, flux_scale = _row_equilibration(elems, mk)
    for k, el in enumerate(elems):
        b = lap_scale[k] * F[k].ravel()
        g = G[k].ravel()
        for side in (mk.side_gamma, mk.side_fict):
            b[side] = g[side]
        b[mk.side_left] = 0.0
        b[mk.side_right] = 0.0
        rhs[k] = b
    return StripSystem(elems, mk, rhs, lap_scale, flux_scale)


def _row_equilibration(elems, mk):
    """1 / max-abs entry of every Laplacian row and every (two-sided) flux row."""
    n = len(elems)
    lap = np.empty((n, mk.N))
    flux = np.empty((n, mk.n_eta - 2))
    for k, el in enumerate(elems):
        lap[k] = 1.0 / np.abs(el.laplacian_matrix(mk)).max(axis=1)
        own = np.abs(el.grad_rows(mk.side_left, el.n_left, mk)).max(axis=1)
        nb = np.abs(elems[k - 1].grad_rows(mk.side_right, el.n_left, mk)).max(axis=1)
        flux[k] = 1.0 / np.maximum(own, nb)
    return lap, flux


# ---------------------------------------------------------------------------
# solution object
# ---------------------------------------------------------------------------

@dataclass
class StripSolution:
    strip: StripRegion
    elems: list
    mk: MeshKit
    values: np.ndarray                     # (n_panel, n_eta, n_xi)
    _tree: object = field(default=None, repr=False)

    @property
    def kit(self) -> SpectralKit:
        return self.strip.outer.kit

    def _cheb_to_leg(self):
        return interp_matrix(self.mk.xi, self.kit.t)

    def fict_values(self) -> np.ndarray:
        """v on the fictitious curve at its Gauss-Legendre nodes, (n_panel, p+1)."""
        return self.values[:, -1, :] @ self._cheb_to_leg().T

    def gamma_values(self) -> np.ndarray:
        return self.values[:, 0, :] @ self._cheb_to_leg().T

    def fict_gradient(self) -> np.ndarray:
        """Complex gradient v_x + i v_y on the fictitious curve nodes."""
        P = self._cheb_to_leg()
        out = np.empty((len(self.elems), self.kit.n), dtype=complex)
        for k, el in enumerate(self.elems):
            v = self.values[k]
            g = el.dx(v, self.mk)[-1] + 1j * el.dy(v, self.mk)[-1]
            out[k] = P @ g
        return out

    def fict_normal_derivative(self) -> np.ndarray:
        """d/dn along the outward normal of the bulk region (pointing into the strip)."""
        g = self.fict_gradient()
        n = self.strip.inner.normal
        return g.real * n.real + g.imag * n.imag

    def interface_audit(self) -> tuple[float, float]:
        """Max value jump and max normal-derivative jump across all interfaces."""
        mk = self.mk
        dv = dn = 0.0
        n = len(self.elems)
        for k, el in enumerate(self.elems):
            kp = (k + 1) % n
            nb = self.elems[kp]
            va, vb = self.values[k][:, -1], self.values[kp][:, 0]
            dv = max(dv, np.abs(va - vb).max())
            nv = el.n_right
            ga = nv.real * el.dx(self.values[k], mk)[:, -1] + nv.imag * el.dy(self.values[k], mk)[:, -1]
            gb = nv.real * nb.dx(self.values[kp], mk)[:, 0] + nv.imag * nb.dy(self.values[kp], mk)[:, 0]
            dn = max(dn, np.abs(ga - gb).max())
        return float(dv), float(dn)

    # -- point evaluation ----------------------------------------------------
    def locate(self, z, tol: float = 1e-12, max_candidates: int = 6):
        """Element index and (xi, eta) of each point; index -1 when outside the strip."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if self._tree is None:
            pts = np.concatenate([e.Z.ravel() for e in self.elems])
            self._tree = (cKDTree(np.column_stack([pts.real, pts.imag])), self.mk.N)
            self._coefs = [(npcheb.chebfit(self.mk.xi, e.xc, self.mk.n_xi - 1),
                            npcheb.chebfit(self.mk.xi, e.xtc, self.mk.n_xi - 1)) for e in self.elems]
        tree, N = self._tree
        kq = min(max_candidates * 4, tree.n)
        _, nn = tree.query(np.column_stack([z.real, z.imag]), k=kq)
        nn = np.atleast_2d(nn)
        idx = np.full(z.size, -1)
        xi = np.zeros(z.size)
        eta = np.zeros(z.size)
        for q in range(z.size):
            tried = []
            for cand in nn[q]:
                k = int(cand // N)
                if k in tried:
                    continue
                tried.append(k)
                if len(tried) > max_candidates:
                    break
                a, b = np.divmod(int(cand % N), self.mk.n_xi)
                s, t = self._newton(k, z[q], self.mk.xi[b], self.mk.eta[a])
                if s is not None and abs(s) <= 1 + tol and abs(t) <= 1 + tol:
                    idx[q], xi[q], eta[q] = k, np.clip(s, -1, 1), np.clip(t, -1, 1)
                    break
        return idx, xi, eta

    def _newton(self, k, z, s, t):
        cx, ct = self._coefs[k]
        dcx, dct = npcheb.chebder(cx), npcheb.chebder(ct)
        for _ in range(40):
            x0, x1 = npcheb.chebval(s, cx), npcheb.chebval(s, ct)
            F = 0.5 * (1 + t) * x1 + 0.5 * (1 - t) * x0 - z
            Fs = 0.5 * (1 + t) * npcheb.chebval(s, dct) + 0.5 * (1 - t) * npcheb.chebval(s, dcx)
            Ft = 0.5 * (x1 - x0)
            det = (Fs.conjugate() * Ft).imag
            if det == 0:
                return None, None
            # solve [Re Fs, Re Ft; Im Fs, Im Ft] [ds, dt] = -F
            ds = -(F.real * Ft.imag - F.imag * Ft.real) / det
            dt = -(Fs.real * F.imag - Fs.imag * F.real) / det
            s, t = s + ds, t + dt
            if abs(s) > 3 or abs(t) > 3:
                return None, None
            if abs(ds) + abs(dt) < 1e-15:
                break
        return s, t

    def evaluate(self, z) -> np.ndarray:
        """Interpolated strip solution at points (NaN outside the strip)."""
        idx, xi, eta = self.locate(z)
        out = np.full(idx.size, np.nan)
        for q in np.flatnonzero(idx >= 0):
            k = idx[q]
            Pe = interp_matrix(self.mk.eta, [eta[q]])
            Px = interp_matrix(self.mk.xi, [xi[q]])
            out[q] = (Pe @ self.values[k] @ Px.T)[0, 0]
        return out


def solve_strip(system: StripSystem, strip: StripRegion | None = None) -> StripSolution | np.ndarray:
    """Factor and solve; returns a StripSolution when the strip region is given."""
    v = system.solve()
    if strip is None:
        return v
    return StripSolution(strip, system.elems, system.mk, v)


# ---------------------------------------------------------------------------
# restart check
# ---------------------------------------------------------------------------

def element_cheb_coeffs(values: np.ndarray, mk: MeshKit) -> np.ndarray:
    """2D Chebyshev coefficients (eta-degree, xi-degree) of grid samples."""
    return mk.c_eta @ values @ mk.c_xi.T


def strip_resolution_restart_check(elems: list[StripElement], mk: MeshKit, f, eps: float,
                                   vscale: float | None = None) -> list[int]:
    """Panels whose element-wise Chebyshev expansion of f has a tail above eps * vscale."""
    F = _grid_values(f, elems, mk, "f")
    if vscale is None:
        vscale = float(np.abs(F).max())
    if vscale == 0.0:
        return []
    bad = []
    for k in range(len(elems)):
        tx, ty = tail_ratio_2d(element_cheb_coeffs(F[k], mk), shells=2)
        if max(tx, ty) > eps * vscale:
            bad.append(k)
    return bad
