"""Fit the two-covariate logit design and print one component with its bands.

Run with ``python demos/fit_logit_design.py``.
"""
import numpy as np

from linkadditive import (
    BasisSpec,
    FirstStageConfig,
    SecondStageConfig,
    build_basis,
    estimate_component,
    fit_first_stage,
    logit_link,
    pilot_from_fit,
    quartic_kernel,
)
from linkadditive.asymptotics import ConditionalVariance, confidence_interval, estimate_V1
from linkadditive.montecarlo import Dgp, generate_sample


def main():
    dgp = Dgp(d=2, n=500)
    data = generate_sample(dgp, seed=1)
    link, kernel = logit_link(), quartic_kernel()

    # first stage: short series fit of every component
    fit = fit_first_stage(data, build_basis(BasisSpec(kappa=4)), link, FirstStageConfig(kappa=(4, 2)))
    print(f"first stage: mu = {fit.mu:.3f}, converged = {fit.converged} after {fit.iterations} iterations")

    # second stage: one local-linear step per grid point, undersmoothed bandwidth
    n, gamma = data.n, 0.3
    h = n ** -gamma
    grid = np.linspace(-0.8, 0.8, 9)
    est = estimate_component(fit, data, link, SecondStageConfig(0, h), grid)

    variance = ConditionalVariance.from_fit(fit, data, link, 1.5 * np.array([h, h]), kernel)
    V = estimate_V1(grid, pilot_from_fit(fit, data, 0), data, link, kernel, h, h * n**gamma, variance)
    ci = confidence_interval(grid, est.values, None, V, n, alpha=0.05, mode="undersmoothed", gamma=gamma)

    print(f"{'x':>6} {'truth':>8} {'series':>8} {'two-stage':>10} {'95% band':>20}")
    for x, t, p, m, lo, hi in zip(grid, dgp.component(0, grid), est.pilot, est.values, ci.lower, ci.upper):
        print(f"{x:6.2f} {t:8.3f} {p:8.3f} {m:10.3f}   [{lo:7.3f}, {hi:7.3f}]")


if __name__ == "__main__":
    main()
