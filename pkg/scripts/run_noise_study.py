"""One N=500 surrogate, validation spectra fitted at SNR inf, 20, 10, 2 and 1."""
import argparse
import sys

from carsfit.cli import main

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--out", default="runs/noise")
p.add_argument("--seed", default="0")
p.add_argument("--n-validation", default="250")
a = p.parse_args()
sys.exit(main(["-v", "study", "--study", "noise", "--snrs", "inf,20,10,2,1", "--n", "500",
               "--n-validation", a.n_validation, "--seed", a.seed, "--out", a.out]))
