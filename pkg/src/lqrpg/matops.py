"""Dense matrix kernels: spectral radius, discrete Lyapunov and Riccati solvers.

The Lyapunov solvers come in two flavours:

* ``solve_lyapunov_obs(F, Y)`` returns ``P`` with ``P = F^T P F + Y``
* ``solve_lyapunov_ctrl(F, Y)`` returns ``S`` with ``S = F S F^T + Y``

Both validate their inputs.  The ``*_batch`` variants skip validation and
accept stacks of matrices with shape ``(..., n, n)``; they are the hot path
of the Monte-Carlo drivers.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import DimensionError, InstabilityError, NonConvergenceError, NumericError

#: strict Schur-stability margin used throughout the package
STABILITY_MARGIN = 1e-12
#: largest state dimension solved by direct vectorisation (Smith doubling above)
KRON_MAX_DIM = 32

DARE_TOL = 1e-12
DARE_MAX_ITER = 100_000
SMITH_MAX_ITER = 200


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-D float array or raise."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError(f"{name} has non-finite entries")
    return M


def _square(M, name):
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def is_symmetric(M, tol=1e-10):
    M = np.asarray(M)
    scale = 1.0 + np.max(np.abs(M), initial=0.0)
    return M.shape[0] == M.shape[1] and np.max(np.abs(M - M.T), initial=0.0) <= tol * scale


def is_psd(M, tol=1e-10):
    """Symmetric and no eigenvalue below ``-tol * (1 + largest eigenvalue)``."""
    M = np.asarray(M, dtype=float)
    if not is_symmetric(M, tol):
        return False
    ev = np.linalg.eigvalsh(0.5 * (M + M.T))
    return ev[0] >= -tol * (1.0 + max(ev[-1], 0.0))


def symmetrize(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def spectral_radius(M):
    """Largest eigenvalue modulus of a square matrix.

    Symmetric inputs go through the symmetric eigensolver.
    """
    M = _square(M, "M")
    try:
        if is_symmetric(M, 0.0):
            ev = np.linalg.eigvalsh(M)
        else:
            ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigenvalue iteration failed: {exc}") from exc
    return float(np.max(np.abs(ev), initial=0.0))


def spectral_radius_batch(M):
    """Spectral radius of each matrix in a stack ``(..., n, n)``."""
    return np.max(np.abs(np.linalg.eigvals(M)), axis=-1)


def _lyap_ctrl_kron(F, Y):
    # vectorised over the upper triangle of the symmetric solution
    n = F.shape[-1]
    lead = F.shape[:-2]
    Fs = np.ascontiguousarray(F.reshape((-1, n, n)))
    Ys = np.ascontiguousarray(np.broadcast_to(Y, F.shape).reshape((-1, n, n)))
    return _kernels.lyap_sym(Fs, Ys).reshape(lead + (n, n))


def _lyap_ctrl_smith(F, Y, tol=1e-14):
    # doubling form of the fixed point S <- F S F^T + Y
    S = np.array(Y, dtype=float)
    Fk = np.array(F, dtype=float)
    for _ in range(SMITH_MAX_ITER):
        inc = Fk @ S @ np.swapaxes(Fk, -1, -2)
        S = S + inc
        if np.max(np.abs(inc)) <= tol * (1.0 + np.max(np.abs(S))):
            return symmetrize(S)
        Fk = Fk @ Fk
    raise NonConvergenceError("Smith iteration did not converge", float(np.max(np.abs(inc))))


def lyap_ctrl_batch(F, Y):
    """Unchecked stacked solve of ``S = F S F^T + Y``."""
    F = np.asarray(F, dtype=float)
    if F.shape[-1] <= KRON_MAX_DIM:
        return _lyap_ctrl_kron(F, np.asarray(Y, dtype=float))
    return _lyap_ctrl_smith(F, np.broadcast_to(Y, F.shape).copy())


def lyap_obs_batch(F, Y):
    """Unchecked stacked solve of ``P = F^T P F + Y``."""
    return lyap_ctrl_batch(np.swapaxes(np.asarray(F, dtype=float), -1, -2), Y)


def _check_lyap_inputs(F, Y):
    F = _square(F, "F")
    Y = _square(Y, "Y")
    if F.shape != Y.shape:
        raise DimensionError(f"F {F.shape} and Y {Y.shape} differ in shape")
    rho = spectral_radius(F)
    if rho >= 1.0 - STABILITY_MARGIN:
        raise InstabilityError(f"Lyapunov solve needs a Schur-stable F, got rho={rho:.6g}")
    return F, Y


def solve_lyapunov_ctrl(F, Y):
    """Solve ``S = F S F^T + Y`` for Schur-stable ``F``.

    Parameters
    ----------
    F : (n, n) array_like
        Closed-loop matrix with spectral radius below one.
    Y : (n, n) array_like
        Symmetric PSD right-hand side.

    Returns
    -------
    S : (n, n) ndarray
        Symmetric PSD solution.
    """
    F, Y = _check_lyap_inputs(F, Y)
    return lyap_ctrl_batch(F, Y)


def solve_lyapunov_obs(F, Y):
    """Solve ``P = F^T P F + Y`` for Schur-stable ``F`` (see :func:`solve_lyapunov_ctrl`)."""
    F, Y = _check_lyap_inputs(F, Y)
    return lyap_obs_batch(F, Y)


def riccati_gain(A, B, R, P):
    """``-(R + B^T P B)^{-1} B^T P A``."""
    BtP = B.T @ P
    return -np.linalg.solve(R + BtP @ B, BtP @ A)


def riccati_map(A, B, Q, R, P):
    BtPA = B.T @ P @ A
    return Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)


def dare_residual(A, B, Q, R, P):
    return float(np.max(np.abs(P - riccati_map(A, B, Q, R, P))))


def solve_dare(A, B, Q, R, tol=DARE_TOL, max_iter=DARE_MAX_ITER):
    """Stabilising solution of the discrete algebraic Riccati equation.

    Iterates the Riccati map from ``P = Q`` until the relative update falls
    below ``tol``.

    Returns
    -------
    P_star : ndarray
        Fixed point of the Riccati map.
    K_star : ndarray
        Optimal gain ``-(R + B^T P B)^{-1} B^T P A`` (policy ``u = K x``).
    """
    A = _square(A, "A")
    Q = _square(Q, "Q")
    R = _square(R, "R")
    B = as_matrix(B, "B")
    n_x, n_u = B.shape
    if A.shape[0] != n_x or Q.shape[0] != n_x or R.shape[0] != n_u:
        raise DimensionError(
            f"inconsistent shapes A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}")
    P = Q.copy()
    step = np.inf
    for _ in range(max_iter):
        P_next = symmetrize(riccati_map(A, B, Q, R, P))
        if not np.all(np.isfinite(P_next)):
            raise NonConvergenceError("Riccati iteration blew up", step)
        step = float(np.max(np.abs(P_next - P)))
        P = P_next
        if step <= tol * (1.0 + float(np.max(np.abs(P)))):
            break
    else:
        raise NonConvergenceError(f"Riccati iteration hit the {max_iter} iteration cap", step)
    K = riccati_gain(A, B, R, P)
    rho = spectral_radius(A + B @ K)
    if rho >= 1.0 - STABILITY_MARGIN:
        raise NonConvergenceError(f"Riccati fixed point is not stabilising (rho={rho:.6g})", step)
    return P, K
