"""Numerical checks of the calculus the convergence theory relies on.

Each check returns a report with a statistic and a tolerance. The negative
controls at the end show that the checks notice broken ingredients.
"""

from rsgd.theory_checks import default_suite

print("standard suite")
for rep in default_suite(seed=0):
    print("  ", rep.summary())

print("\nretraction rescaled by 1.1")
for rep in default_suite(seed=0, corrupt="retraction"):
    if rep.name == "retraction_axioms":
        print("  ", rep.summary())

print("\nsubgradients with flipped sign")
for rep in default_suite(seed=0, corrupt="subgradient"):
    if rep.name in ("chain_rule", "grad_ae", "loop_integral"):
        print("  ", rep.summary())
