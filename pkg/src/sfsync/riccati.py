"""Low-gain continuous algebraic Riccati equation.

Solves ``A'P + PA - PBB'P + eps*I = 0`` for the stabilizing solution.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import InvalidInput, SolverFailure

EPS_FLOOR = 1e-12
COND_LIMIT = 1e12


@dataclass(frozen=True)
class CareSolution:
    epsilon: float
    P: np.ndarray
    residual_norm: float


def residual(model, epsilon, P):
    """Frobenius norm of the Riccati residual at ``P``."""
    A, B = model.A, model.B
    P = np.asarray(P, dtype=float)
    R = A.T @ P + P @ A - P @ B @ B.T @ P + epsilon * np.eye(A.shape[0])
    return float(np.linalg.norm(R, "fro"))


def _schur_solution(A, S, epsilon):
    n = A.shape[0]
    H = np.block([[A, -S], [-epsilon * np.eye(n), -A.T]])
    T, U, sdim = la.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise SolverFailure(
            f"Hamiltonian has {sdim} stable eigenvalues, expected {n}; "
            "(A, B) may not be stabilizable"
        )
    U11, U21 = U[:n, :n], U[n:, :n]
    cond = np.linalg.cond(U11)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SolverFailure(
            f"stable invariant subspace is ill-conditioned (cond(U11) = {cond:.3e})"
        )
    P = la.solve(U11.T, U21.T).T
    return (P + P.T) / 2


def _newton_kleinman(A, B, epsilon, P):
    # solve (A - BK)'X + X(A - BK) = -(K'K + eps I), K = B'P
    K = B.T @ P
    Acl = A - B @ K
    Q = K.T @ K + epsilon * np.eye(A.shape[0])
    X = la.solve_continuous_lyapunov(Acl.T, -Q)
    return (X + X.T) / 2


def solve_care(model, epsilon):
    """Stabilizing solution of the low-gain ARE.

    ``epsilon`` below ``EPS_FLOOR`` is clamped to the floor; the returned
    :class:`CareSolution` records the value actually used.
    """
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise InvalidInput(f"epsilon must be positive, got {epsilon}")
    epsilon = max(epsilon, EPS_FLOOR)
    A, B = model.A, model.B
    P = _schur_solution(A, B @ B.T, epsilon)
    if np.all(np.linalg.eigvals(A - B @ B.T @ P).real < 0):
        P_ref = _newton_kleinman(A, B, epsilon, P)
        # keep the refinement only if it did not make things worse
        if residual(model, epsilon, P_ref) <= residual(model, epsilon, P):
            P = P_ref
    if not np.all(np.linalg.eigvals(A - B @ B.T @ P).real < 0):
        raise SolverFailure("ARE solution is not stabilizing")
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise SolverFailure("ARE solution is not positive definite")
    P.setflags(write=False)
    return CareSolution(epsilon=epsilon, P=P, residual_norm=residual(model, epsilon, P))
