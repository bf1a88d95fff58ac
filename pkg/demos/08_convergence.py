"""Manufactured-solution convergence at Re=1 for k=1 and k=2."""
from hdgal.driver import convergence_study

for k in (1, 2):
    print(f"k={k}")
    print(convergence_study(k=k, levels=(4, 8, 16), re=1.0).table())
