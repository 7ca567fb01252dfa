"""Confidence-interval coverage of the slope estimator over seeded noisy samples."""

import numpy as np

from ttlscope.subnets import regress

TRUE_SLOPE, TRUE_INTERCEPT, SIGMA = 1.14, 7.74, 14.3


def main(seeds: int = 100, n: int = 500) -> None:
    covered, r2 = 0, []
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        x = rng.integers(1, 11, size=n).astype(float)
        y = TRUE_SLOPE * x + TRUE_INTERCEPT + rng.normal(0.0, SIGMA, size=n)
        fit = regress(zip(x, y))
        lo, hi = fit.slope_ci()
        covered += lo <= TRUE_SLOPE <= hi
        r2.append(fit.r_squared)
    print(f"slope inside 95% CI: {covered}/{seeds}; mean r^2 {np.mean(r2):.3f}")


if __name__ == "__main__":
    main()
