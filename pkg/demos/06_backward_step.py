"""Backward-facing step to Re=400 with the directional outflow condition."""
from hdgal.driver import ContinuationSchedule, bfs_case, reports_to_csv, solve_steady
from hdgal.mesh import generate_bfs

res = solve_steady(bfs_case(), generate_bfs(2), 2, 1e4, schedule=ContinuationSchedule.default("bfs", 400))
print(reports_to_csv(res.reports, timings=False), end="")
