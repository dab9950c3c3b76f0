"""Output-law sensitivity of a ReLU SNN to a parameter perturbation of size eps.

Shifting only the output bias translates the output law, so W2^2 is eps^2
exactly. A generic direction should also scale like eps^2 once the signal
clears the Monte Carlo floor.
"""
from w2snn import theory

base = theory.robustness_network(0)
for direction in ("bias", "generic"):
    res = theory.robustness_slope(base, [0.5, -0.3], [0.05, 0.1, 0.2, 0.4], direction, K=2048, repeats=4)
    print(f"{direction}: floor {res.floor:.2e}")
    for e, s, used in zip(res.eps_grid, res.signals, res.used):
        print(f"  eps {e:.2f}  W2^2 {s:.3e}{'' if used else '  (below floor, not fitted)'}")
    print(f"  slope {res.fit.slope:.3f}, within 2x envelope: {res.within_envelope()}")
