"""Model-based tracking oracle.

Builds the augmented plant+reference system, solves the discounted
Riccati equation by fixed-point iteration, and runs model-based policy
iteration.  This module is the ground truth the model-free learner is
validated against; nothing here is used inside the learner itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ConvergenceError(RuntimeError):
    """Iteration failed to reach tolerance; carries the last residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class NotStabilizingError(ValueError):
    """Initial policy does not stabilize the discounted closed loop."""


@dataclass(frozen=True)
class AugmentedModel:
    """Plant state stacked with the reference generator state X = [x, r]."""

    A_a: np.ndarray   # 2x2, diag(A, F)
    B_b: np.ndarray   # 2x1, [B, 0]
    C_c: np.ndarray   # 1x2, [C, 0]
    Q_q: np.ndarray   # 2x2 tracking weight
    R_u: float
    gamma: float

    def __post_init__(self):
        for name in ("A_a", "B_b", "C_c", "Q_q"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        if not (0 < self.gamma <= 1):
            raise ValueError("discount must be in (0, 1]")
        if not (self.R_u > 0):
            raise ValueError("input weight must be positive")
        if not np.allclose(self.Q_q, self.Q_q.T):
            raise ValueError("tracking weight must be symmetric")


def build_augmented(A: float, B: float, C: float = 1.0, F: float = 1.0,
                    Q: float = 100.0, R_u: float = 0.001,
                    gamma: float = 0.9) -> AugmentedModel:
    """Assemble the augmented block system and the tracking weight.

    Q_q = [C, -1]^T Q [C, -1] penalizes the output-vs-reference error.
    """
    for v in (A, B, C, F, Q):
        if not np.isfinite(v):
            raise ValueError("plant parameters must be finite")
    A_a = np.array([[A, 0.0], [0.0, F]])
    B_b = np.array([[B], [0.0]])
    C_c = np.array([[C, 0.0]])
    e = np.array([[C, -1.0]])
    Q_q = e.T * Q @ e
    return AugmentedModel(A_a, B_b, C_c, Q_q, float(R_u), float(gamma))


def closed_loop(model: AugmentedModel, K: np.ndarray) -> np.ndarray:
    """A_a - B_b K for a row gain K."""
    K = np.asarray(K, float).reshape(1, 2)
    return model.A_a - model.B_b @ K


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_stabilizing(model: AugmentedModel, K: np.ndarray) -> bool:
    """Discounted stability: sqrt(gamma) * rho(A_a - B_b K) < 1."""
    return np.sqrt(model.gamma) * spectral_radius(closed_loop(model, K)) < 1.0


def are_fixed_point(model: AugmentedModel, tol: float = 1e-10,
                    max_iter: int = 10000) -> np.ndarray:
    """Solve the discounted Riccati equation by iterating from P = 0."""
    A, B = model.A_a, model.B_b
    g, Ru = model.gamma, model.R_u
    P = np.zeros((2, 2))
    residual = np.inf
    for _ in range(max_iter):
        S = Ru + g * (B.T @ P @ B).item()
        P_next = model.Q_q + g * A.T @ P @ A \
            - g ** 2 * (A.T @ P @ B) @ (B.T @ P @ A) / S
        P_next = (P_next + P_next.T) / 2
        residual = float(np.linalg.norm(P_next - P))
        P = P_next
        if residual < tol:
            return P
    raise ConvergenceError(
        f"Riccati iteration did not converge in {max_iter} steps "
        f"(last residual {residual:.3e})", residual)


def optimal_gain(P: np.ndarray, model: AugmentedModel) -> np.ndarray:
    """Greedy gain K = (R_u + g B'PB)^-1 g B'PA; control law u = -K X."""
    B, A, g = model.B_b, model.A_a, model.gamma
    S = model.R_u + g * (B.T @ P @ B).item()
    if S <= 0:
        raise ValueError(f"singular/indefinite input denominator {S:.3e}")
    return (g * B.T @ P @ A / S).ravel()


def evaluate_policy(model: AugmentedModel, K: np.ndarray) -> np.ndarray:
    """Exact policy evaluation: solve P = Q_K + gamma Ac' P Ac by vectorization."""
    K = np.asarray(K, float).ravel()
    Ac = closed_loop(model, K)
    Q_K = model.Q_q + model.R_u * np.outer(K, K)
    M = np.eye(4) - model.gamma * np.kron(Ac.T, Ac.T)
    p = np.linalg.solve(M, Q_K.flatten(order="F"))
    P = p.reshape(2, 2, order="F")
    return (P + P.T) / 2


class PIResult(NamedTuple):
    P: np.ndarray
    K: np.ndarray
    iterations: int


def policy_iteration_model_based(model: AugmentedModel, K0,
                                 tol: float = 1e-10,
                                 max_iter: int = 200) -> PIResult:
    """Alternate exact policy evaluation and greedy improvement from K0.

    K0 must stabilize the discounted closed loop, otherwise the evaluated
    cost is unbounded and the linear solve is meaningless.
    """
    K = np.asarray(K0, float).ravel()
    if K.shape != (2,):
        raise ValueError("initial gain must have two entries")
    if not is_stabilizing(model, K):
        raise NotStabilizingError(
            f"initial gain {K} is not stabilizing for the discounted loop")
    for i in range(1, max_iter + 1):
        P = evaluate_policy(model, K)
        if not np.all(np.isfinite(P)):
            raise ConvergenceError("policy evaluation diverged")
        K_next = optimal_gain(P, model)
        if np.linalg.norm(K_next - K) < tol:
            return PIResult(evaluate_policy(model, K_next), K_next, i)
        K = K_next
    raise ConvergenceError(f"policy iteration did not converge in {max_iter} steps")
