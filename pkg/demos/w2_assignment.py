"""Exact W2 between two small point clouds and its envelope gradient."""
import numpy as np

from w2snn.ot import brute_force_w2, squared_w2, squared_w2_grad

rng = np.random.default_rng(0)
A = rng.normal(size=(6, 2))
B = rng.normal(size=(6, 2)) + [2.0, 0.0]

c = squared_w2(A, B)
print("matching A[i] -> B[perm[i]]:", c.perm)
print(f"W2^2 = {c.cost:.6f}  (brute force over 720 permutations: {brute_force_w2(A, B):.6f})")

# moving A along minus the gradient lowers the cost
g = squared_w2_grad(A, B, c)
for step in (0.0, 0.5, 1.0, 1.5):
    print(f"step {step:.1f}: W2^2 = {squared_w2(A - step * g, B).cost:.6f}")
# a step of N/2 lands every point on its partner
