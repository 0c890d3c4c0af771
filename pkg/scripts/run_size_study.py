"""Error versus random-library size at SNR 50; writes a tidy CSV to --out."""
import argparse
import sys

from carsfit.cli import main

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--out", default="runs/size")
p.add_argument("--seed", default="0")
p.add_argument("--n-validation", default="250")
a = p.parse_args()
sys.exit(main(["-v", "study", "--study", "size", "--ns", "32,100,243,500,1024,3000", "--snr", "50",
               "--n-validation", a.n_validation, "--seed", a.seed, "--out", a.out]))
