"""
Closed loops in a noisy toric code
==================================

Ground-state snapshots of the toric code in the Z basis contain only closed
loops, so every plaquette product is +1 and every square Wilson loop
averages to 1. Independent bit flips break loops, and the loop expectation
decays exponentially with the perimeter at a rate fixed by the flip rate.
"""

from quan.datagen import toric
from quan.datagen.toric import ToricCodeParams

###############################################################################
# Sample 6x6 plaquette windows from a 12x12 torus at a few flip rates. Each
# torus sample is cut into four windows.

sizes = [1, 2, 3, 4, 5, 6]
for p in (0.0, 0.02, 0.05, 0.10):
    w = toric.toric_windows(ToricCodeParams(12, 12, p_flip=p, samples=5000, seed=1))
    means = [toric.loop_expectation(w, s)[0] for s in sizes]
    print(f"p_flip={p:<5}", " ".join(f"{m:7.4f}" for m in means))

###############################################################################
# Fit the decay rate per perimeter edge and compare with -ln(1 - 2p).

for p in (0.02, 0.05, 0.10):
    w = toric.toric_windows(ToricCodeParams(6, 6, p_flip=p, window=(6, 6), samples=50_000, seed=2))
    exps = [toric.loop_expectation(w, s)[0] for s in sizes[:4]]
    alpha = toric.fit_loop_tension([4 * s for s in sizes[:4]], exps)
    print(f"p_flip={p}: fitted {alpha:.4f}, exact {toric.loop_tension_exact(p):.4f}")
