"""Predictive coordinated control of a quadcopter carrying a serial arm.

Modules: ``kinematics`` (frames and arm kinematics), ``model`` (discrete prediction models),
``residual`` (learned velocity correction), ``allocation`` (hover/coordinated/flight weighting),
``qp`` and ``mpc`` (condensed box-constrained controller), ``plant`` (synthetic closed-loop
vehicle) and ``harness`` (scenarios, logging and the command line).
"""

__version__ = "0.1.0"
