"""Lid-driven cavity with Reynolds continuation."""
from hdgal.driver import ContinuationSchedule, divergence_moments, lid_case, reports_to_csv, solve_steady
from hdgal.mesh import generate_unit_square

res = solve_steady(lid_case(), generate_unit_square(8), 2, 1e4,
                   schedule=ContinuationSchedule.default("lid", 1000), precond="GM")
print(reports_to_csv(res.reports, timings=False), end="")
cell, face = divergence_moments(res.disc, res.state)
print(f"max divergence moments: cell {abs(cell).max():.1e}, face {abs(face).max():.1e}")
