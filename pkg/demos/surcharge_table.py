"""Spillover surcharge of the Policy Gaussian threshold over the zero-mass benchmark.

The benchmark assumes a removed user's items carry no mass below the threshold.
The real threshold pays a small premium for the spillover. This prints both for
a grid of epsilon and per-user item caps.
"""
import math

from dpunion.calibration import calibrate_sigma, rho1
from dpunion.dpsu import spillover_surcharge_table

delta = math.exp(-10)
print(f"{'eps':>5} {'cap':>5} {'rho_pg':>8} {'rho_zero':>9} {'surcharge':>10} {'relative':>9}")
for row in spillover_surcharge_table(delta=delta):
    print(f"{row.epsilon:5.1f} {row.delta0:5d} {row.rho_pg:8.2f} {row.rho_zero:9.2f} "
          f"{row.surcharge:10.2f} {row.relative:9.1%}")

# At eps=8 the maximizing t is 1, so the cap no longer moves rho1.
sigma = calibrate_sigma(8.0, delta / 2)
for cap in (1, 10, 100):
    print(f"rho1 at eps=8, cap {cap}: {rho1(sigma, delta / 2, cap):.3f}")
