"""
How much of the output bound does noise eat?
============================================

The tightening coefficients grow along the prediction horizon and with
the noise bound. Their constant offsets decide feasibility outright: once
an offset reaches the output bound, no plan exists at all. The precheck
bisects for the largest noise level the configuration can tolerate.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ddmpc import (
    certify_constants,
    compute_coefficients,
    feasibility_precheck,
    generate_data,
    realize_transfer_function,
)

plant = realize_transfer_function([0.02, 0.061, 0.011], [1.0, -2.1, 1.5, -0.3])
record = generate_data(plant, N=1000, u_lo=[-10], u_hi=[10], seed=1,
                       noise_bound=0.0, order=3, pe_order=16)
constants = certify_constants(record, 3, 10, [-10], [10], 10.0)

fig, ax = plt.subplots(figsize=(6, 3))
for eps in (1e-5, 1e-4, 1e-3):
    coeffs = compute_coefficients(constants, eps, 10, 3)
    pre = feasibility_precheck(coeffs, 10.0)
    print(f"noise bound {eps:g}: max offset a4 = {coeffs.a4.max():.4f} "
          f"-> {'feasible' if pre.feasible else 'INFEASIBLE'}")
    ax.semilogy(range(coeffs.count), coeffs.a4, "o-", label=f"noise {eps:g}")

pre = feasibility_precheck(compute_coefficients(constants, 1e-4, 10, 3), 10.0)
print(f"\nlargest admissible noise bound (bisection): {pre.max_admissible_noise:.6g}")

ax.axhline(10.0, color="k", linestyle="--", linewidth=0.8, label="output bound")
ax.set_xlabel("constrained step k")
ax.set_ylabel("constant offset a4[k]")
ax.legend(fontsize=8)
fig.tight_layout()
fig.savefig("tightening.svg")
print("wrote tightening.svg")
