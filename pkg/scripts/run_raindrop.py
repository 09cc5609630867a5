"""Raindrop benchmark: clustered Gaussians sliding into the tip."""
import argparse
import json

import numpy as np

from adaptpoisson.geometry import raindrop
from adaptpoisson.problems import cusp_gaussians
from adaptpoisson.solver import ProblemSpec, random_interior_points, report, solve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eta", type=float, default=1e-3)
    ap.add_argument("--eps", type=float, default=1e-10)
    ap.add_argument("--n-probes", type=int, default=10_000)
    args = ap.parse_args()
    pr = cusp_gaussians(args.eta)
    sol = solve(ProblemSpec(pr.f, pr.g, eps=args.eps, curve=raindrop(args.eta), exact=pr.u))
    probes = random_interior_points(sol.boundary, args.n_probes, seed=1)
    tip = random_interior_points(sol.boundary, 400_000, seed=2)
    tip = tip[np.abs(tip) < 0.05][:3000]
    rep = report(sol, np.concatenate([probes, tip]))
    print(json.dumps(rep, indent=2))


if __name__ == "__main__":
    main()
