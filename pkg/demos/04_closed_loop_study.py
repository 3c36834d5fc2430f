"""
Closed loop under tightened constraints
=======================================

The receding-horizon controller maximizes the output subject to the
tightened bound, applying three inputs per solve. The input saturates,
the true output never touches the constraint, and the measured
open-loop prediction error stays inside its certified bound at every
step of every solve.
"""
from ddmpc import example_config, plot_input_svg, plot_output_svg, run_closed_loop

config = example_config(online_seed=0, steps=120)
log = run_closed_loop(config)

summary = log.summary()
print(f"steps completed:        {summary['steps_completed']}")
print(f"max |y| (true output):  {summary['max_abs_y']:.3f}  (bound 10)")
print(f"saturated input steps:  {summary['saturation_count']}")
print(f"settled output mean:    {summary['mean_y_final_half']:.3f}")
print(f"prediction-error bound: {summary['diag_violations']} violations")
print(f"equilibrium residual of the setpoint: {log.equilibrium_residual:.3f} "
      "(the slack absorbs it)")

worst = max(s.diag_max_ratio for s in log.solves)
print(f"worst measured error / certified bound: {worst:.3f}")

plot_input_svg(log, "closed_loop_input.svg")
plot_output_svg(log, "closed_loop_output.svg")
print("wrote closed_loop_input.svg, closed_loop_output.svg")
