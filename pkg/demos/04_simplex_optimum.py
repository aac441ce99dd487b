"""Where the one-positive InfoNCE objective wants to put class prototypes.

With one prototype per class and every other class as a negative, the
population objective is minimized by a regular simplex: all pairwise inner
products equal to -1/(E-1). That needs at least E-1 dimensions; squeeze the
prototypes into 2-D and the optimum becomes a ring instead, which is the
geometric reason circle-shaped spaces trade away classification margin.
"""

from ecmsphere.metrics import theory_check_sincere_simplex

print(f"{'E':>3s} {'d':>3s} {'target':>8s} {'max dev':>9s} {'converged':>9s}")
for E in (2, 4, 12):
    report = theory_check_sincere_simplex(E=E, d=E + 4, tau=0.1, steps=4000, seed=0)
    print(
        f"{E:>3d} {E + 4:>3d} {report.target:>8.4f} {report.max_deviation:>9.1e} "
        f"{str(report.converged):>9s}"
    )

# the constrained case: four classes in two dimensions form a square on the
# circle (neighbors at 0, opposites at -1), far from the -1/3 simplex value
report = theory_check_sincere_simplex(E=4, d=2, tau=0.1, steps=4000, seed=0)
print(
    f"\nE=4 in d=2: feasible={report.feasible}, max deviation from -1/3 = "
    f"{report.max_deviation:.3f}"
)
print("pairwise inner products:")
for row in report.sims:
    print("  " + " ".join(f"{v:+.3f}" for v in row))
