"""Model-free Q-learning for the tracking problem.

Everything in this module works on sampled transition tuples
(M_k, M_{k+1}, stage cost) with M = [x, r, u]; no plant parameter ever
enters.  The quadratic action value 0.5 * M' G M is fitted in the
6-dimensional symmetric half-vectorization basis, by batch least squares
or recursively.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

# independent entries of a symmetric 3x3 kernel, order:
# (0,0) (0,1) (0,2) (1,1) (1,2) (2,2)
NUM_PARAMS = 6
MIN_TUPLES = NUM_PARAMS


class RankDeficientError(RuntimeError):
    """Regression design is not full rank; the dither was insufficient."""

    def __init__(self, rank: int):
        super().__init__(f"design matrix rank {rank} < {NUM_PARAMS}; "
                         "training data lacks persistent excitation")
        self.rank = rank


class ExcitationError(RuntimeError):
    """Fitted kernel has a non-positive input block; evaluation failed."""


class QTrainError(RuntimeError):
    """Policy iteration on sampled data failed to converge."""


@dataclass(frozen=True)
class QKernel:
    """Symmetric 3x3 action-value kernel over M = [x, r, u]."""

    G: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.G, float)
        if G.shape != (3, 3):
            raise ValueError("kernel must be 3x3")
        if not np.all(np.isfinite(G)):
            raise ValueError("kernel entries must be finite")
        if not np.allclose(G, G.T, rtol=0, atol=1e-8 * (1 + np.abs(G).max())):
            raise ValueError("kernel must be symmetric")
        object.__setattr__(self, "G", (G + G.T) / 2)

    @property
    def G_XX(self) -> np.ndarray:
        return self.G[:2, :2]

    @property
    def G_Xu(self) -> np.ndarray:
        return self.G[:2, 2]

    @property
    def G_uX(self) -> np.ndarray:
        return self.G[2, :2]

    @property
    def G_uu(self) -> float:
        return float(self.G[2, 2])

    def to_vec(self) -> np.ndarray:
        G = self.G
        return np.array([G[0, 0], G[0, 1], G[0, 2], G[1, 1], G[1, 2], G[2, 2]])

    @classmethod
    def from_vec(cls, g: Sequence[float]) -> "QKernel":
        a, b, c, d, e, f = np.asarray(g, float)
        return cls(np.array([[a, b, c], [b, d, e], [c, e, f]]))


@dataclass(frozen=True)
class DataTuple:
    """One sampled transition: M_k, the successor M_{k+1} under the
    evaluated policy, and the observed stage cost."""

    M_k: np.ndarray
    M_k1: np.ndarray
    stage_cost: float

    def __post_init__(self):
        object.__setattr__(self, "M_k", np.asarray(self.M_k, float).ravel())
        object.__setattr__(self, "M_k1", np.asarray(self.M_k1, float).ravel())
        if self.M_k.shape != (3,) or self.M_k1.shape != (3,):
            raise ValueError("tuple vectors must have 3 entries [x, r, u]")
        if not (np.all(np.isfinite(self.M_k)) and np.all(np.isfinite(self.M_k1))
                and np.isfinite(self.stage_cost)):
            raise ValueError("tuple entries must be finite")
        if self.stage_cost < -1e-9:
            raise ValueError("stage cost must be non-negative")


def sym_features(M: np.ndarray) -> np.ndarray:
    """Quadratic monomials of M in the symmetric basis, cross terms doubled,
    so that features(M) . vec(G) == M' G M."""
    m0, m1, m2 = M
    return np.array([m0 * m0, 2 * m0 * m1, 2 * m0 * m2,
                     m1 * m1, 2 * m1 * m2, m2 * m2])


def q_value(kernel: QKernel, X, u: float) -> float:
    """Action value 0.5 * M' G M with M = [X; u]."""
    M = np.array([X[0], X[1], u], float)
    return 0.5 * float(M @ kernel.G @ M)


def stage_cost(X, u: float, Q_q: np.ndarray, R_u: float) -> float:
    """One-step tracking cost X' Q_q X + R_u u^2."""
    X = np.asarray(X, float)
    return float(X @ Q_q @ X + R_u * u * u)


def policy_improvement(kernel: QKernel) -> np.ndarray:
    """Greedy gain K = G_uu^-1 G_uX; control law u = -K X."""
    if kernel.G_uu <= 0:
        raise ExcitationError(
            f"G_uu = {kernel.G_uu:.3e} is not positive; kernel is not a valid "
            "action value (insufficient excitation)")
    return kernel.G_uX / kernel.G_uu


def build_ls_rows(tuples: Sequence[DataTuple], gamma: float):
    """Bellman regression rows: features(M_k) - gamma * features(M_{k+1}),
    one per tuple, with the stage costs as targets."""
    if len(tuples) < MIN_TUPLES:
        raise ValueError(f"need at least {MIN_TUPLES} tuples, got {len(tuples)}")
    design = np.array([sym_features(t.M_k) - gamma * sym_features(t.M_k1)
                       for t in tuples])
    targets = np.array([t.stage_cost for t in tuples])
    return design, targets


def batch_ls_solve(design: np.ndarray, targets: np.ndarray) -> QKernel:
    """Least-squares kernel fit; rejects rank-deficient designs."""
    g, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    if rank < NUM_PARAMS:
        raise RankDeficientError(int(rank))
    return QKernel.from_vec(g)


@dataclass(frozen=True)
class RlsState:
    """Recursive least-squares state: current coefficient estimate and
    covariance over the 6 kernel entries."""

    g_vec: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g_vec", np.asarray(self.g_vec, float).ravel())
        object.__setattr__(self, "eta", np.asarray(self.eta, float))
        if self.g_vec.shape != (NUM_PARAMS,):
            raise ValueError("coefficient vector must have 6 entries")
        if self.eta.shape != (NUM_PARAMS, NUM_PARAMS):
            raise ValueError("covariance must be 6x6")
        if not np.allclose(self.eta, self.eta.T):
            raise ValueError("covariance must be symmetric")


def rls_init(tau: float = 1e6, kernel: QKernel | None = None) -> RlsState:
    """Fresh RLS state: covariance tau*I, coefficients from kernel or zero."""
    g = kernel.to_vec() if kernel is not None else np.zeros(NUM_PARAMS)
    return RlsState(g, tau * np.eye(NUM_PARAMS))


def rls_update(state: RlsState, row: np.ndarray, target: float) -> RlsState:
    """One recursive least-squares step on a single regression row."""
    row = np.asarray(row, float).ravel()
    eta_row = state.eta @ row
    denom = 1.0 + float(row @ eta_row)
    err = target - float(row @ state.g_vec)
    g = state.g_vec + eta_row * (err / denom)
    eta = state.eta - np.outer(eta_row, eta_row) / denom
    return RlsState(g, (eta + eta.T) / 2)


@dataclass(frozen=True)
class QTrainConfig:
    gamma: float = 0.9
    tuples_per_iter: int = 6     # z; must be >= the 6 kernel parameters
    tol: float = 1e-4            # on the gain change between iterations
    max_iters: int = 100

    def __post_init__(self):
        if not (0 < self.gamma <= 1):
            raise ValueError("discount must be in (0, 1]")
        if self.tuples_per_iter < MIN_TUPLES:
            raise ValueError(f"need at least {MIN_TUPLES} tuples per iteration")


class QTrainResult(NamedTuple):
    kernel: QKernel
    gain: np.ndarray
    iterations: int


Collector = Callable[[np.ndarray, int], Sequence[DataTuple]]


def q_policy_iteration(collect: Collector, K0,
                       cfg: QTrainConfig = QTrainConfig()) -> QTrainResult:
    """Sampled policy iteration: fit the kernel of the current gain from
    freshly collected tuples, take the greedy gain, repeat until the gain
    stops moving.

    collect(gain, count) must return `count` tuples gathered under
    u = -gain . [x, r] plus exploration dither, with the successor action in
    M_{k+1} taken by the un-dithered policy.  Convergence is declared on the
    gain, not the kernel: kernel null directions under limited excitation
    make the gain the robust criterion.
    """
    K = np.asarray(K0, float).ravel()
    kernel = None
    for i in range(1, cfg.max_iters + 1):
        tuples = collect(K, cfg.tuples_per_iter)
        design, targets = build_ls_rows(tuples, cfg.gamma)
        kernel = batch_ls_solve(design, targets)
        K_next = policy_improvement(kernel)
        if np.linalg.norm(K_next - K) < cfg.tol:
            return QTrainResult(kernel, K_next, i)
        K = K_next
    raise QTrainError(f"gain did not settle within {cfg.max_iters} iterations "
                      f"(last gain {K})")
