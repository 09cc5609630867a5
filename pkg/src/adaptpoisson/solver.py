"""End-to-end interior Dirichlet Poisson solve u = v + w.

v is the glued particular solution: the truncated volume potential in the
bulk region, the strip spectral solution between the boundary and the
fictitious curve, and the layer-potential correction D[tau] - S[sigma] on
the fictitious curve that removes their mismatch.  w is harmonic with
w = g - v on the boundary.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import shapely

from .bie import GMRESResult, NystromSystem, assemble_nystrom, solve_bie
from .geometry import Curve, Panelization, adaptive_panelize, enforce_panel_rules
from .layers import DEFAULT_POLICY, CloseEvalPolicy, LayerDensity, compute_jumps, dlp_eval, v_glue_eval
from .quadtree import CurveShape, TreeConfig, TruncatedQuadtree, build_truncated_tree
from .strip import (StripSolution, assemble_strip_system, build_strip_mesh, default_radial_order,
                    solve_strip, strip_resolution_restart_check)
from .strip_geometry import StripRegion, WidthFunctionConfig, build_strip
from .volume import VolumePotentialEvaluator

log = logging.getLogger(__name__)

REPORT_SCHEMA = "adaptpoisson.report/1"
MAX_RESTARTS = 10

# routing codes
OUTSIDE, BULK, STRIP, ON_FICT = 0, 1, 2, 3


class StageError(RuntimeError):
    """Failure inside one solver stage; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException | str):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class RestartCapError(StageError):
    def __init__(self, restarts: int, flagged: list[int]):
        super().__init__("restart", f"strip still under-resolves f on {len(flagged)} "
                                    f"elements after {restarts} restarts")
        self.flagged = flagged


@dataclass
class ProblemSpec:
    f: Callable                       # f(x, y), vectorized
    g: Callable                       # g(x, y) on the boundary
    eps: float = 1e-10
    p: int = 16
    p_r: int | None = None
    curve: Curve | None = None
    pan: Panelization | None = None
    exact: Callable | None = None
    eps_quad: float | None = None     # defaults to 0.1 eps
    width: WidthFunctionConfig | None = None
    max_restarts: int = MAX_RESTARTS
    strip_criterion: bool = True
    gmres_tol: float | None = None
    close: CloseEvalPolicy = DEFAULT_POLICY

    def __post_init__(self):
        if not (1e-14 <= self.eps <= 1e-2):
            raise ValueError(f"eps={self.eps} outside [1e-14, 1e-2]")
        if self.curve is None and self.pan is None:
            raise ValueError("need a curve or a panelization")
        if not (callable(self.f) and callable(self.g)):
            raise ValueError("f and g must be callable")
        if self.p < 3:
            raise ValueError("panel order must be at least 3")

    @property
    def quad_tol(self) -> float:
        return self.eps_quad if self.eps_quad is not None else 0.1 * self.eps


@dataclass
class SolutionField:
    problem: ProblemSpec
    boundary: Panelization
    strip: StripRegion
    strip_solution: StripSolution
    tree: TruncatedQuadtree
    volume: VolumePotentialEvaluator
    tau: LayerDensity
    sigma: LayerDensity
    mu: LayerDensity
    bie: NystromSystem
    gmres: GMRESResult
    vscale: float
    restarts: int = 0
    timings: dict = field(default_factory=dict)
    _shapes: tuple | None = field(default=None, repr=False)

    # -- routing -----------------------------------------------------------
    def _curve_shapes(self):
        if self._shapes is None:
            self._shapes = (CurveShape(self.boundary), CurveShape(self.strip.inner))
        return self._shapes

    def _side(self, pan: Panelization, shape: CurveShape, z: np.ndarray) -> np.ndarray:
        """+1 inside, -1 outside, 0 on the curve; exact test for points near the polyline."""
        x, y = z.real, z.imag
        side = np.where(shape.contains(x, y), 1, -1)
        band = 0.05 * float(pan.length.min())
        near = np.flatnonzero(shapely.distance(shape.ring, shapely.points(x, y)) < band)
        if near.size:
            d1 = dlp_eval(pan, 1.0, z[near], self.problem.close)
            side[near] = np.where(np.abs(d1 + 0.5) < 0.25, 0, np.where(d1 < -0.5, 1, -1))
        return side

    def route(self, points) -> np.ndarray:
        """OUTSIDE, BULK, STRIP or ON_FICT for each point."""
        z = _as_complex(points)
        outer, inner = self._curve_shapes()
        s_out = self._side(self.boundary, outer, z)
        codes = np.full(z.size, OUTSIDE, dtype=np.int8)
        ins = s_out > 0
        if ins.any():
            s_in = self._side(self.strip.inner, inner, z[ins])
            codes[ins] = np.where(s_in > 0, BULK, np.where(s_in < 0, STRIP, ON_FICT))
        return codes

    # -- evaluation ----------------------------------------------------------
    def particular(self, points, codes=None) -> np.ndarray:
        z = _as_complex(points)
        codes = self.route(z) if codes is None else codes
        out = np.full(z.size, np.nan)
        ok = codes != OUTSIDE
        if not ok.any():
            return out
        glue = v_glue_eval(self.tau, self.sigma, self.strip.inner, z[ok], self.problem.close)
        base = np.full(ok.sum(), np.nan)
        c = codes[ok]
        zz = z[ok]
        b = (c == BULK) | (c == ON_FICT)
        if b.any():
            base[b] = self.volume(zz[b])
        s = (c == STRIP) | (c == ON_FICT)
        if s.any():
            sv = self.strip_solution.evaluate(zz[s])
            lost = np.isnan(sv) & (c[s] == STRIP)
            if lost.any():
                log.warning("%d strip points could not be located in any element", int(lost.sum()))
            if (c == ON_FICT).any():
                # on the interface: average the two one-sided limits (v_glue is the PV mean)
                on = c[s] == ON_FICT
                bulk_on = base[s][on]
                sv[on] = 0.5 * (sv[on] + bulk_on)
            base[s] = sv
        out[ok] = base + glue
        return out

    def homogeneous(self, points, codes=None) -> np.ndarray:
        z = _as_complex(points)
        codes = self.route(z) if codes is None else codes
        out = np.full(z.size, np.nan)
        ok = codes != OUTSIDE
        if ok.any():
            out[ok] = dlp_eval(self.boundary, self.mu, z[ok], self.problem.close)
        return out

    def evaluate(self, points) -> np.ndarray:
        """u at points inside the domain; NaN (flagged) outside."""
        z = _as_complex(points)
        codes = self.route(z)
        return self.particular(z, codes) + self.homogeneous(z, codes)

    def outside_mask(self, points) -> np.ndarray:
        return self.route(points) == OUTSIDE

    # -- diagnostics ---------------------------------------------------------
    def interface_mismatch(self, rel_offset: float = 1e-6) -> float:
        """max |bulk formula - strip formula| on the fictitious curve nodes.

        Each one-sided limit is extrapolated from offsets d and 2d along the
        normal (2 v(d) - v(2d)), which removes the O(d) gradient term.
        """
        inner = self.strip.inner
        d = rel_offset * np.repeat(inner.length[:, None], inner.kit.n, axis=1)
        z0, nrm = inner.z, inner.normal
        tau, sig, pol = self.tau, self.sigma, self.problem.close

        def bulk(z):
            return self.volume(z) + v_glue_eval(tau, sig, inner, z, pol)

        def strip(z):
            return self.strip_solution.evaluate(z) + v_glue_eval(tau, sig, inner, z, pol)

        vb = 2 * bulk((z0 - d * nrm).ravel()) - bulk((z0 - 2 * d * nrm).ravel())
        vs = 2 * strip((z0 + d * nrm).ravel()) - strip((z0 + 2 * d * nrm).ravel())
        return float(np.nanmax(np.abs(vb - vs)))

    def errors(self, points) -> np.ndarray:
        if self.problem.exact is None:
            raise ValueError("no reference solution attached")
        z = _as_complex(points)
        return np.abs(self.evaluate(z) - self.problem.exact(z.real, z.imag))

    def counts(self) -> dict:
        p1 = self.tree.config.p + 1
        mk = self.strip_solution.mk
        n_tree = int(self.tree.source_leaves.size * p1 * p1)
        n_strip = int(len(self.strip_solution.elems) * mk.N)
        return {"N_tree": n_tree, "N_strip": n_strip, "N": n_tree + n_strip,
                "N_bdy": int(self.boundary.z.size),
                "n_panels": int(self.boundary.n_panel),
                "n_leaves": int(self.tree.n_leaves),
                "n_source_leaves": int(self.tree.source_leaves.size),
                "n_boxes": int(self.tree.n_boxes),
                "strip_grid": [int(mk.n_xi), int(mk.n_eta)]}


def _as_complex(points) -> np.ndarray:
    z = np.asarray(points)
    if np.iscomplexobj(z):
        return z.ravel()
    z = np.atleast_2d(z.astype(float))
    return (z[:, 0] + 1j * z[:, 1]).ravel()


def estimate_vscale(f: Callable, pan: Panelization, n: int = 256) -> float:
    """max |f| over a regular grid clipped to the domain plus the boundary nodes."""
    shape = CurveShape(pan, factor=2)
    z = pan.z.ravel()
    xs = np.linspace(z.real.min(), z.real.max(), n)
    ys = np.linspace(z.imag.min(), z.imag.max(), n)
    X, Y = np.meshgrid(xs, ys)
    m = shape.contains(X.ravel(), Y.ravel())
    vals = [np.abs(np.asarray(f(z.real, z.imag), float)).max()]
    if m.any():
        vals.append(np.abs(np.asarray(f(X.ravel()[m], Y.ravel()[m]), float)).max())
    v = float(max(vals))
    return v if v > 0 else 1.0


def _stage(name, timings):
    class _T:
        def __enter__(self):
            self.t0 = time.perf_counter()

        def __exit__(self, et, ev, tb):
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - self.t0
            if ev is not None and not isinstance(ev, StageError):
                raise StageError(name, ev) from ev
            return False
    return _T()


def solve(problem: ProblemSpec) -> SolutionField:
    """Panelize, build the strip (restarting while it under-resolves f), then
    tree, volume potential, strip solve, gluing and the boundary equation."""
    T: dict[str, float] = {}
    eps = problem.eps
    with _stage("panelize", T):
        pan = problem.pan if problem.pan is not None else adaptive_panelize(problem.curve, problem.p, eps)
    p_r = problem.p_r if problem.p_r is not None else default_radial_order(pan.kit.p)
    with _stage("vscale", T):
        vscale = estimate_vscale(problem.f, pan)

    restarts = 0
    while True:
        with _stage("strip_geometry", T):
            pan, strip, _ = build_strip(pan, problem.width, eps=eps)
            elems, mk = build_strip_mesh(strip, p_r=p_r)
            flagged = strip_resolution_restart_check(elems, mk, problem.f, eps, vscale)
        if not flagged:
            break
        if restarts >= problem.max_restarts:
            raise RestartCapError(restarts, flagged)
        restarts += 1
        log.info("restart %d: splitting %d panels", restarts, len(flagged))
        pan = enforce_panel_rules(pan.bisect(flagged))

    with _stage("strip_solve", T):
        system = assemble_strip_system(elems, mk, problem.f, 0.0)
        ssol = solve_strip(system, strip)

    with _stage("tree", T):
        cfg = TreeConfig(p=pan.kit.p, eps=eps, vscale=vscale, strip_criterion=problem.strip_criterion)
        tree = build_truncated_tree(problem.f, strip, cfg)

    with _stage("volume", T):
        vol = VolumePotentialEvaluator(tree, problem.quad_tol)
        vb, gb = vol.value_and_gradient(strip.inner.z.ravel())

    with _stage("glue", T):
        tau, sigma = compute_jumps(ssol.fict_values(), ssol.fict_normal_derivative(),
                                   vb, gb, strip.inner.normal)
        # v_strip vanishes on the boundary, so v there is the glue term alone
        v_gamma = v_glue_eval(tau, sigma, strip.inner, strip.outer.z.ravel(), problem.close)
        assert np.abs(ssol.gamma_values()).max() <= 1e-8 * max(1.0, np.abs(ssol.values).max())

    with _stage("bie", T):
        outer = strip.outer
        gz = np.asarray(problem.g(outer.z.real, outer.z.imag), float).ravel()
        nys = assemble_nystrom(outer, problem.close)
        tol = problem.gmres_tol if problem.gmres_tol is not None else min(1e-12, 0.01 * eps)
        mu, res = solve_bie(nys, gz - v_gamma, tol=tol)

    T["total"] = sum(v for k, v in T.items())
    return SolutionField(problem, outer, strip, ssol, tree, vol, tau, sigma, mu, nys, res,
                         vscale, restarts, T)


def report(sol: SolutionField, probes=None, include_interface: bool = True) -> dict:
    """Stable-schema run summary; errors are included when a reference solution is known."""
    out = {"schema": REPORT_SCHEMA,
           "eps": sol.problem.eps,
           "eps_quad": sol.problem.quad_tol,
           "p": int(sol.boundary.kit.p),
           "p_r": int(sol.strip_solution.mk.n_eta - 1),
           "restarts": int(sol.restarts),
           "gmres_iterations": int(sol.gmres.iterations),
           "gmres_residual": float(sol.gmres.history[-1]),
           "counts": sol.counts(),
           "timings": {k: float(v) for k, v in sol.timings.items()},
           "max_err": None, "n_probes": 0}
    if include_interface:
        out["interface_mismatch"] = sol.interface_mismatch()
    if probes is not None and sol.problem.exact is not None:
        err = sol.errors(probes)
        out["max_err"] = float(np.nanmax(err))
        out["n_probes"] = int(np.isfinite(err).sum())
    return out


def random_interior_points(pan: Panelization, n: int, seed: int = 0, margin: float = 0.0) -> np.ndarray:
    """Uniform points inside the polyline of the boundary (optionally kept ``margin`` away)."""
    rng = np.random.default_rng(seed)
    shape = CurveShape(pan)
    z = pan.z.ravel()
    lo, hi = (z.real.min(), z.imag.min()), (z.real.max(), z.imag.max())
    out = []
    have = 0
    while have < n:
        P = rng.uniform(lo, hi, size=(4 * n, 2))
        m = shape.contains(P[:, 0], P[:, 1])
        if margin > 0:
            m &= shapely.distance(shape.ring, shapely.points(P[:, 0], P[:, 1])) > margin
        out.append(P[m])
        have += int(m.sum())
    P = np.concatenate(out)[:n]
    return P[:, 0] + 1j * P[:, 1]
