"""Dense checks of the Schur expansion on small random saddle-point matrices."""
from hdgal.perturblab import run_verification, verify_schur_expansion, worked_example

ex = verify_schur_expansion(worked_example(), gammas=(10.0,))
row = ex["rows"][0]
print(f"2x2 example at gamma=10: -S = 1/11, leading-term residual {row['leading_residual']:.6f}")
print(f"second-order sign: {ex['sign']} (plus residual {row['residual_plus']:.2e}, "
      f"minus residual {row['residual_minus']:.2e})")
print(run_verification(seed=0, instances=50).text())
