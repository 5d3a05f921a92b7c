"""A tour of the Poincare ball operations.

Lifts a few Euclidean vectors into the ball, moves them with Mobius addition,
maps them back and shows how distances grow towards the boundary.
"""

import numpy as np

from hyperite import geometry as G

c = 1.0
v = np.array([0.5, 0.0])
x = G.exp_map0(v, c)
print("exp_0((0.5, 0)) =", x, "  (tanh 0.5 =", np.tanh(0.5), ")")
print("log_0 back      =", G.log_map0(x, c))

# Mobius addition is not commutative, but -x cancels x from the left
y = G.exp_map0(np.array([0.0, 0.8]), c)
print("x (+) y =", G.mobius_add(x, y, c))
print("y (+) x =", G.mobius_add(y, x, c))
print("-x (+) x =", G.mobius_add(-x, x, c))

# equal Euclidean steps cover more hyperbolic distance near the boundary
print("\nradius  distance to origin")
for r in (0.1, 0.5, 0.9, 0.99):
    p = np.array([r, 0.0])
    print(f"{r:6.2f}  {G.hyp_distance(np.zeros(2), p, c):8.4f}")

# small curvature behaves like flat space
a, b = np.array([0.3, -0.2]), np.array([0.1, 0.4])
print("\nc=1e-6 mobius_add:", G.mobius_add(a, b, 1e-6), " plain sum:", a + b)
print("projection of (2, 0):", G.project_to_ball(np.array([2.0, 0.0]), c))
