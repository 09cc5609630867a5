"""Manufactured test problems: u given analytically, f = Lap u, g = u on the boundary."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Gaussian:
    x0: float
    y0: float
    sigma: float
    amp: float = 1.0

    def value(self, x, y):
        r2 = (x - self.x0) ** 2 + (y - self.y0) ** 2
        return self.amp * np.exp(-r2 / (2.0 * self.sigma**2))

    def laplacian(self, x, y):
        s2 = self.sigma**2
        r2 = (x - self.x0) ** 2 + (y - self.y0) ** 2
        return self.amp * np.exp(-r2 / (2.0 * s2)) * (r2 / s2 - 2.0) / s2


@dataclass(frozen=True)
class Background:
    """a * x * cos(k pi y) + b * (x^2 - y^2) + c."""

    a: float = 0.0
    k: float = 3.0
    b: float = 0.0
    c: float = 0.0

    def value(self, x, y):
        return self.a * x * np.cos(self.k * np.pi * y) + self.b * (x * x - y * y) + self.c

    def laplacian(self, x, y):
        return -self.a * (self.k * np.pi) ** 2 * x * np.cos(self.k * np.pi * y)


@dataclass(frozen=True)
class ManufacturedProblem:
    """u = background + sum of Gaussians."""

    name: str
    gaussians: tuple[Gaussian, ...] = ()
    background: Background = field(default_factory=Background)

    def u(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        out = self.background.value(x, y) * np.ones(np.broadcast(x, y).shape)
        for g in self.gaussians:
            out = out + g.value(x, y)
        return out

    def f(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        out = self.background.laplacian(x, y) * np.ones(np.broadcast(x, y).shape)
        for g in self.gaussians:
            out = out + g.laplacian(x, y)
        return out

    def g(self, x, y):
        return self.u(x, y)

    @property
    def exact(self):
        return self.u

    def describe(self) -> dict:
        return {"name": self.name,
                "gaussians": [[g.x0, g.y0, g.sigma, g.amp] for g in self.gaussians],
                "background": vars(self.background).copy()}


def harmonic(kind: str = "saddle") -> ManufacturedProblem:
    """f = 0 test: u = x^2 - y^2."""
    return ManufacturedProblem(kind, (), Background(b=1.0))


def random_gaussians(count: int = 5, sigma_range=(0.05, 0.5), seed: int = 0,
                     inside: Callable | None = None, radius: float = 0.5,
                     background: Background | None = None, center=(0.0, 0.0)) -> ManufacturedProblem:
    """Gaussians with log-uniform widths; centres drawn in the disk of the given
    radius and centre (and accepted by ``inside`` when provided)."""
    rng = np.random.default_rng(seed)
    lo, hi = sigma_range
    gs = []
    while len(gs) < count:
        r = radius * np.sqrt(rng.uniform())
        th = rng.uniform(0, 2 * np.pi)
        x0, y0 = center[0] + r * np.cos(th), center[1] + r * np.sin(th)
        if inside is not None and not inside(x0, y0):
            continue
        sigma = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        gs.append(Gaussian(float(x0), float(y0), sigma, float(rng.uniform(0.5, 1.5))))
    bg = background if background is not None else Background(a=0.5, k=1.0, b=0.25)
    return ManufacturedProblem(f"gaussians-{count}-seed{seed}", tuple(gs), bg)


def cusp_gaussians(eta: float = 1e-3, count: int | None = None, ratio: float = 0.5,
                   depth0: float = 0.5, width: float = 0.2, stop: float = 25.0) -> ManufacturedProblem:
    """Gaussians sliding into the rounded cusp of the raindrop (tip at the origin,
    body below it).  Centre depths shrink by ``ratio`` and each width is
    ``width`` times its depth; by default the last one sits at a depth in
    [stop * eta, stop * eta / ratio), so the finest scale follows eta.
    Background 2x cos(3 pi y)."""
    if count is None:
        count = max(1, int(np.floor(np.log(stop * eta / depth0) / np.log(ratio))) + 1)
    gs = []
    for k in range(count):
        d = depth0 * ratio**k
        gs.append(Gaussian(0.0, -d, width * d, 1.0))
    return ManufacturedProblem(f"cusp-gaussians-eta{eta:g}", tuple(gs), Background(a=2.0, k=3.0))


@dataclass(frozen=True)
class SourceProblem:
    """Right-hand side and boundary data without a known solution."""

    name: str
    f: Callable
    g: Callable
    params: dict = field(default_factory=dict)
    exact = None

    def describe(self) -> dict:
        return {"name": self.name, **self.params}


def polar_angle(x0: float = 0.0, y0: float = 2.0) -> SourceProblem:
    """f = polar angle about (x0, y0), g = 0.  The branch cut runs from the
    centre directly away from the origin, so it misses domains around the
    origin when the centre lies outside them."""
    c = complex(x0, y0)
    if c == 0:
        raise ValueError("polar-angle centre must not be the origin")

    def f(x, y):
        z = np.asarray(x, float) + 1j * np.asarray(y, float)
        return np.angle((z - c) / (-c))

    def g(x, y):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    return SourceProblem("polar-angle", f, g, {"x0": x0, "y0": y0})


PROBLEMS = {
    "polar-angle": polar_angle,
    "harmonic": lambda **kw: harmonic(),
    "manufactured-gaussians": random_gaussians,
    "cusp-gaussians": cusp_gaussians,
}


def make_problem(name: str, **params) -> ManufacturedProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)}") from None
    return factory(**params)
