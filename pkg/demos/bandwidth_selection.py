"""Compare the plug-in and penalized least squares bandwidth constants on one sample.

Run with ``python demos/bandwidth_selection.py``.
"""
from linkadditive import BasisSpec, FirstStageConfig, build_basis, fit_first_stage, logit_link
from linkadditive.bandwidth import PlsConfig, PlsObjective, average_squared_error, minimize_pls, plugin_bandwidth
from linkadditive.montecarlo import Dgp, generate_sample


def main():
    dgp = Dgp(d=2, n=500)
    data = generate_sample(dgp, seed=3)
    link = logit_link()
    fit = fit_first_stage(data, build_basis(BasisSpec(kappa=4)), link, FirstStageConfig(kappa=(4, 2)))

    plugin = [plugin_bandwidth(fit, data, link, j) for j in range(data.d)]
    pls = minimize_pls(PlsConfig(grid_points=6), data, fit, link)

    # the average squared error needs the truth, so it is only available in simulations
    objective = PlsObjective(data, fit, link)
    truth = dgp.index(data.X)
    for name, C in (("plug-in", plugin), ("PLS", pls.C)):
        ase = average_squared_error(objective.index(C), truth, link)
        print(f"{name:>8}: C_h = ({C[0]:.3f}, {C[1]:.3f})  ASE = {ase:.5f}")
    print(f"PLS evaluated the criterion {len(pls.trace)} times")


if __name__ == "__main__":
    main()
