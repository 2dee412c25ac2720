"""Switched-system optimal control toolkit for wheel-loader loading cycles.

Modules:
    engine     synthetic-engine data generation and model identification
    plant      11-state switched wheel-loader dynamics and integrators
    transform  hat-time change of variables, discretization, tracking cost
    adp        backward costate-network training, policy, switching-time sweep
    lqr        exact switched-LQR recursion (correctness oracle)
    cli        command-line front end
"""

__version__ = "0.1.0"
