"""Raindrop eta-sweep: DOF, time and memory versus 1/eta (writes study.csv)."""
import sys

from adaptpoisson.cli import main

if __name__ == "__main__":
    args = sys.argv[1:] or ["--etas", "1e-1,1e-2,1e-3,1e-4", "--eps", "1e-8", "--out", "eta_sweep"]
    sys.exit(main(["study", "--mode", "eta-sweep", "--geometry", "raindrop",
                   "--problem", "cusp-gaussians", *args]))
