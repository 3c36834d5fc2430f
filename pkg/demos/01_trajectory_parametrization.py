"""
One experiment parametrizes every trajectory
============================================

A single input/output record with a persistently exciting input spans the
whole behavior of the plant: any other trajectory is a column combination
of its Hankel matrices, and anything that is not a trajectory leaves a
visible residual.
"""
import numpy as np

from ddmpc import (
    Trajectory,
    generate_data,
    is_persistently_exciting,
    membership_residual,
    realize_transfer_function,
    simulate,
    trajectory_from_alpha,
)

plant = realize_transfer_function([0.02, 0.061, 0.011], [1.0, -2.1, 1.5, -0.3])
record = generate_data(plant, N=1000, u_lo=[-10], u_hi=[10], seed=1,
                       noise_bound=0.0, order=3, pe_order=16)

# the excitation certificate behind everything else
report = is_persistently_exciting(record.u_data(), 16)
print(f"excitation order {report.order}: rank {report.rank}/{report.required}, "
      f"smallest retained singular value {report.smallest_retained_sv:.2f}")

# a fresh trajectory of the same plant is reproduced exactly
rng = np.random.default_rng(0)
fresh = simulate(plant, rng.normal(size=3), rng.uniform(-10, 10, size=(13, 1)))
residual, alpha = membership_residual(record, fresh)
print(f"member residual:      {residual:.2e}")

rebuilt = trajectory_from_alpha(record, 13, alpha)
print(f"reconstruction error: {np.abs(rebuilt.y - fresh.y).max():.2e}")

# perturbing the outputs breaks membership immediately
broken = Trajectory(fresh.u, fresh.y + rng.uniform(-0.2, 0.2, size=(13, 1)))
residual, _ = membership_residual(record, broken)
print(f"non-member residual:  {residual:.2e}")
