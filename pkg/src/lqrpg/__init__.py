"""Policy-gradient methods for the noisy discrete-time LQR problem.

Modules
-------
matops      Lyapunov/Riccati kernels and spectral radius
lqr         cost, gradients and level-set constants
sim         seeded closed-loop simulation
ident       least-squares identification and the indirect gradient oracle
zeroth      zeroth-order gradient oracle
sgd         SGD drivers and step-size schedules
experiments config loading, dispatch and CSV output
"""

__version__ = "0.1.0"
