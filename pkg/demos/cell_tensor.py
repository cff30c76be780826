"""Homogenized tensor of the {1, 4} checkerboard under cell refinement.

The exact tensor of a two-phase checkerboard is the geometric mean times the
identity, here 2.  The script prints the discrete tensor, its coercivity
certificate and the weak flux residual of the flux correctors for a few cell
resolutions, then a Richardson estimate of the limit.

    python demos/cell_tensor.py
"""
import numpy as np

from homog2d import checkerboard_field, flux_correctors, homogenized_tensor, solve_cell_problems
from homog2d.cell import weak_flux_residual


def main():
    field = checkerboard_field((1.0, 4.0))
    rows = []
    print(f"{'m':>5} {'ahat_11':>12} {'ahat_12':>10} {'certificate':>12} {'flux res':>10} {'uncorrected':>12}")
    for m in (16, 32, 64, 128):
        corr = solve_cell_problems(field, m)
        ahat = homogenized_tensor(field, corr)
        flux = flux_correctors(field, corr, ahat)
        t = ahat.matrix()
        rows.append(t[0, 0])
        print(f"{m:5d} {t[0, 0]:12.6f} {t[0, 1]:10.2e} {ahat.coercivity_lower_bound:12.6f} "
              f"{weak_flux_residual(flux):10.2e} {weak_flux_residual(flux, 'element'):12.2e}")
    d1, d2 = rows[-3] - rows[-2], rows[-2] - rows[-1]
    p = np.log2(d1 / d2)
    print(f"observed order {p:.3f}, extrapolated ahat_11 = {rows[-1] - d2 / (2 ** p - 1):.6f} (exact 2)")


if __name__ == "__main__":
    main()
