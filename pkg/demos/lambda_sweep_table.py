"""Sweep the diagonal-shift scale and print kappa(X + lambda * I_k).

On matrices whose smallest singular value sits far below 1, the curve
drops steeply and then flattens: past a modest lambda there is little
conditioning left to gain.  (Which lambda trains best is a separate,
empirical question; this table only shows the conditioning side.)

Run:  python3 demos/lambda_sweep_table.py
"""

import numpy as np

from condtokens import condition_number, lambda_sweep, svd


def main():
    rng = np.random.default_rng(3)
    u, _, vt = np.linalg.svd(rng.standard_normal((16, 8)), full_matrices=False)
    x = (u * np.array([5.0, 4.0, 3.0, 2.0, 1.0, 0.5, 0.1, 0.01])) @ vt

    sigma = svd(x).sigma
    print(f"X is 16x8 with sigma_1 = {sigma[0]:.3f}, sigma_k = {sigma[-1]:.3f}, "
          f"kappa = {condition_number(x).kappa:.1f}\n")

    print(" lambda   kappa(X + lambda I_k)")
    for lam, kappa in lambda_sweep(x):  # default integer grid 1..20
        bar = "#" * max(1, int(round(kappa * 8)))
        print(f"{lam:7.0f}   {kappa:8.4f}  {bar}")


if __name__ == "__main__":
    main()
