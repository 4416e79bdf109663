"""Manifolds, tangent spaces and retractions.

Walks through the operations the optimizer relies on: projecting an ambient
vector onto a tangent space, moving along it with a retraction and checking
that the result stays on the manifold.
"""

import numpy as np

from rsgd.geometry import FixedRank, Sphere, Stiefel, first_order_defects
from rsgd.seeding import make_rng

rng = make_rng(0)

# On the unit sphere the normal direction at x is x itself.
sphere = Sphere(3)
x = np.array([1.0, 0.0, 0.0])
print("project e1 at e1:", sphere.tangent_project(x, x))
print("project e2 at e1:", sphere.tangent_project(x, np.array([0.0, 1.0, 0.0])))

# The sphere uses its exponential map: a quarter turn lands on e2.
v = np.array([0.0, np.pi / 2, 0.0])
print("exp_x(pi/2 e2):", np.round(sphere.exp_map(x, v), 12))
print("geodesic distance:", sphere.dist(x, sphere.exp_map(x, v)))

# Stiefel matrices have orthonormal columns; the QR retraction keeps them so.
st = Stiefel(6, 2)
X = st.random_point(rng)
V = st.tangent_project(X, rng.standard_normal((6, 2)))
Y = st.retract(X, 0.3 * V)
print("Stiefel orthogonality defect after a step:", np.linalg.norm(Y.T @ Y - np.eye(2)))

# A retraction matches the straight line to first order, so the gap shrinks like h**2.
for m in (st, FixedRank(8, 7, 2)):
    p = m.random_point(rng)
    rep = first_order_defects(m, p, m.random_tangent(p, rng, 1.0))
    print(f"{m!r}: log-log slope {rep.slope:.3f}")
    for h, d in rep.slopes:
        print(f"    h={h:.0e}  defect={d:.3e}")

# Fixed-rank points are stored as thin SVD factors.
fr = FixedRank(8, 7, 2)
P = fr.random_point(rng)
print("rank of U S V^T:", np.linalg.matrix_rank(P.full()), "norm:", np.linalg.norm(P.full()))
