"""
Checking gradients against finite differences
=============================================

Every energy the optimizer uses is compared with central differences, both
with respect to positions p and through the smoothed variable u.
"""

from densadapt.gradcheck import run_gradcheck, step_sweep

for r in run_gradcheck(sizes=(200,)):
    print(r)

# truncation error shrinks with h, roundoff grows as h gets tiny
for h, err in zip((1e-4, 1e-5, 1e-6), step_sweep("D_c")):
    print("h=%.0e  rel err %.2e" % (h, err))

# a deliberately broken gradient must be caught
bad = run_gradcheck(sizes=(60,), energies=("D_n",), corrupt="D_n")
print("corrupted D_n detected:", not any(r.passed for r in bad))
