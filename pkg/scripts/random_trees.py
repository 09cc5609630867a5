"""Balance and strip-size audit of truncated quadtrees on random geometries."""
import argparse

import numpy as np

from adaptpoisson.geometry import adaptive_panelize, ellipse, raindrop, star
from adaptpoisson.quadtree import TreeConfig, balance_violations, build_truncated_tree, strip_violations
from adaptpoisson.strip_geometry import build_strip


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1000)
    args = ap.parse_args()
    for i in range(args.n):
        rng = np.random.default_rng(args.seed + i)
        kind = rng.integers(3)
        if kind == 0:
            c = star(rng.uniform(0.5, 1.5), rng.uniform(0.05, 0.3), int(rng.integers(3, 8)))
        elif kind == 1:
            c = ellipse(1.0, rng.uniform(0.3, 1.0))
        else:
            c = raindrop(10 ** rng.uniform(-2, 0))
        eps = 10 ** rng.uniform(-8, -4)
        p = int(rng.choice([8, 12, 16]))
        pan, strip, _ = build_strip(adaptive_panelize(c, p, eps), eps=eps)
        z = pan.z.ravel()
        cen, R = z.mean(), np.abs(z - z.mean()).max()
        x0, y0 = cen.real + 0.5 * R * rng.uniform(-1, 1), cen.imag + 0.5 * R * rng.uniform(-1, 1)
        s = R * 10 ** rng.uniform(-2, -0.5)
        tree = build_truncated_tree(lambda x, y: np.exp(-((x - x0) ** 2 + (y - y0) ** 2) / (2 * s * s)),
                                    strip, TreeConfig(p=p, eps=eps))
        print(f"{i:3d} {c.name:9s} p={p:2d} eps={eps:.1e} leaves={tree.n_leaves:6d} "
              f"balance={len(balance_violations(tree))} strip={strip_violations(tree).size}")


if __name__ == "__main__":
    main()
