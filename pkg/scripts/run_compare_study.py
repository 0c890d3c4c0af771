"""Kernel surrogate on random libraries against Lagrange on 2^5, 3^5 and 4^5 grids."""
import argparse
import sys

from carsfit.cli import main

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--out", default="runs/compare")
p.add_argument("--seed", default="0")
p.add_argument("--n-validation", default="250")
a = p.parse_args()
sys.exit(main(["-v", "study", "--study", "compare", "--grid-levels", "2,3,4", "--random-n", "32,243,1024",
               "--snr", "50", "--n-validation", a.n_validation, "--seed", a.seed, "--out", a.out]))
