"""Monte Carlo EIMSE of the two-stage and oracle estimators at the reference tunings.

Run with ``python demos/table1_reproduction.py [replications]`` (default 50).
"""
import sys

from linkadditive.montecarlo import TABLE1, run_experiment, table1_config


def main(replications=50):
    print(f"{'d':>2} {'estimator':>14} {'hessian':>9} {'EIMSE f1':>9} {'EIMSE f2':>9}   reference")
    for (d, estimator), row in TABLE1.items():
        hessians = ("observed",) if estimator == "oracle" else ("observed", "expected")
        for hessian in hessians:
            report = run_experiment(table1_config(d, estimator, replications, hessian=hessian))
            f1, f2 = report.eimse
            print(f"{d:2d} {estimator:>14} {hessian:>9} {f1:9.4f} {f2:9.4f}   {row['eimse'][0]:.3f} {row['eimse'][1]:.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 50)
