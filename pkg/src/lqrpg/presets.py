"""Named problem instances used by the tests and the experiment CLI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lqr import LinearSystem, LqrCost
from .matops import solve_dare

BENCHMARK3_A = np.array([
    [1.01, 0.01, 0.00],
    [0.01, 1.01, 0.01],
    [0.00, 0.01, 1.01],
])

BOEING747_A = np.array([
    [1.0, -1.13, -0.65, -0.807, 1.59],
    [0.0, 0.77, 0.32, -0.98, -2.97],
    [0.0, 0.12, 0.02, 0.0, -0.36],
    [0.0, 0.01, 0.01, -0.03, -0.04],
    [0.0, 0.14, -0.09, 0.29, 0.76],
])

BOEING747_B = np.array([
    [89.20, -50.17, 1.13, -19.35],
    [5.22, 6.36, 0.23, -0.32],
    [-9.47, 5.93, -0.12, 0.99],
    [-0.32, 0.32, -0.01, -0.01],
    [-4.53, 3.21, -0.14, 0.09],
])

PRESET_NAMES = ("scalar", "benchmark3", "boeing747")


@dataclass(frozen=True, eq=False)
class Problem:
    name: str
    system: LinearSystem
    cost: LqrCost
    K0: np.ndarray


def scalar(sigma_w=1.0):
    """``a=0.5, b=1, q=r=1``; initial gain ``k=0``."""
    sys = LinearSystem(A=[[0.5]], B=[[1.0]], sigma_w=[[sigma_w]], sigma_0=[[1.0]],
                       sigma_e=[[1.0]])
    return Problem("scalar", sys, LqrCost(Q=[[1.0]], R=[[1.0]]), np.zeros((1, 1)))


def benchmark3(sigma_w=1e-4, sigma_e=1.0):
    """Weakly coupled 3x3 unstable plant; gain fixed at ``K*(A, B, 50Q, R)``."""
    A, B = BENCHMARK3_A.copy(), np.eye(3)
    Q, R = 1e-3 * np.eye(3), np.eye(3)
    sys = LinearSystem(A=A, B=B, sigma_w=sigma_w * np.eye(3), sigma_0=0.1 * np.eye(3),
                       sigma_e=sigma_e * np.eye(3))
    _, K0 = solve_dare(A, B, 50.0 * Q, R)
    return Problem("benchmark3", sys, LqrCost(Q=Q, R=R), K0)


def boeing747(sigma_w=1e-3, sigma_e=1.0):
    """Boeing 747 longitudinal dynamics; ``K0 = K*(A, B, 40Q, R)``."""
    A, B = BOEING747_A.copy(), BOEING747_B.copy()
    Q, R = np.eye(5), np.eye(4)
    sys = LinearSystem(A=A, B=B, sigma_w=sigma_w * np.eye(5), sigma_0=1e-6 * np.eye(5),
                       sigma_e=sigma_e * np.eye(4))
    _, K0 = solve_dare(A, B, 40.0 * Q, R)
    return Problem("boeing747", sys, LqrCost(Q=Q, R=R), K0)


def get(name, **overrides):
    try:
        factory = {"scalar": scalar, "benchmark3": benchmark3, "boeing747": boeing747}[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {PRESET_NAMES}") from None
    return factory(**overrides)
