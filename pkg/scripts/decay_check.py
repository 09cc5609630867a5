"""Chebyshev decay of the truncated volume potential along the fictitious curve,
with and without the strip refinement criterion."""
import numpy as np

from adaptpoisson.geometry import adaptive_panelize, circle, raindrop
from adaptpoisson.quadtree import TreeConfig, build_truncated_tree
from adaptpoisson.strip_geometry import build_strip
from adaptpoisson.volume import VolumePotentialEvaluator, verify_geometric_decay


def source(x, y):
    return np.exp(-((x - 0.2) ** 2 + (y - 0.1) ** 2) / (2 * 0.3 ** 2)) + 2 * x * np.cos(3 * np.pi * y)


def main():
    for curve in (circle(), raindrop(1e-3)):
        pan, strip, _ = build_strip(adaptive_panelize(curve, 16, 1e-10), eps=1e-10)
        for crit in (True, False):
            tree = build_truncated_tree(source, strip, TreeConfig(eps=1e-10, strip_criterion=crit))
            rep = verify_geometric_decay(VolumePotentialEvaluator(tree, 1e-12), strip.inner)
            ok = rep.passes()
            print(f"{curve.name:9s} strip_criterion={crit!s:5s} leaves={tree.n_leaves:6d} "
                  f"pass {ok.sum()}/{ok.size} min rate {rep.rates.min():.2f}")


if __name__ == "__main__":
    main()
