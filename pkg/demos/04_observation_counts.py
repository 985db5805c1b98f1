"""How many observations does a cell need before it knows the limit?

Plain Jacobi sweeps need the error to shrink below the tolerance.
The Hankel-matrix detector needs only enough samples to find the minimal
polynomial of the local observation sequence, then extrapolates.
"""

from ctmflow.harness import table1_experiment
from ctmflow.network import grid_network, spectral_radius, turning_matrices

rows = table1_experiment([(2, 2), (2, 5), (5, 5), (5, 10)], tol=1e-9)
print(" grid  cells  radius  plain sweeps  final-value  extrapolation error")
for r in rows:
    rad = spectral_radius(turning_matrices(grid_network(r.m, r.n))[0])
    print(f"{r.m:>2}x{r.n:<2} {r.cells:>6}  {rad:6.3f}  {r.naive:>12}  {r.final_value:>11}  {r.final_value_error:>10.1e}")
