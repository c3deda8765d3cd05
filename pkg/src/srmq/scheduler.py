"""Q-core table over (rotor angle, current) with bilinear scheduling.

A grid of independently trained action-value kernels covers the
inductance surface.  At runtime the four kernels around the operating
point are blended bilinearly (entrywise) and the greedy gain is taken
from the blended kernel; each core can also be refined online by
recursive least squares as the trajectory visits its cell.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

import numpy as np

from . import qlearn
from .plant import InductanceSurface, MotorParams, inductance_at
from .qlearn import DataTuple, QKernel, QTrainConfig, RlsState

TABLE_FORMAT_VERSION = 1


class TableTrainError(RuntimeError):
    """One or more grid nodes failed to train; lists the failing nodes."""

    def __init__(self, failures):
        nodes = ", ".join(f"({r},{c}): {msg}" for r, c, msg in failures)
        super().__init__(f"training failed at nodes {nodes}")
        self.failures = failures


class SafetyAbortError(RuntimeError):
    """Phase current exceeded the configured safety bound."""


class TableMismatchError(ValueError):
    """Table file was trained against different motor parameters."""


@dataclass(frozen=True)
class TableTrainConfig:
    """Everything needed to train and refine a Q-core table."""

    q_weight: float = 100.0
    r_weight: float = 0.001
    gamma: float = 0.9
    K0: tuple = (100.0, -100.0)
    dither: float = 15.0           # exploration voltage amplitude, V
    tuples_per_iter: int = 6
    tol: float = 1e-4
    max_iters: int = 100
    tau: float = 1e6               # RLS covariance init during training
    online_tau: float = 1e3        # RLS covariance init for online refinement
    gain_clamp: float = 0.02       # max relative gain change per online update
    safety_factor: float = 3.0     # abort when |x| exceeds this times nominal
    seed: int = 0

    def tracking_weight(self) -> np.ndarray:
        q = self.q_weight
        return np.array([[q, -q], [-q, q]])


@dataclass(frozen=True)
class CellLocation:
    """Enclosing cell (lower corner indices) and normalized offsets."""

    row: int     # theta index
    col: int     # current index
    l1: float    # theta offset in [0, 1)
    l2: float    # current offset in [0, 1)


@dataclass
class QCoreTable:
    """Grid of trained kernels, cached greedy gains, and per-core RLS state.

    Single writer (online updates), many readers; an update replaces a
    whole core at once so readers never see a half-written kernel.
    """

    theta_nodes: np.ndarray
    current_nodes: np.ndarray
    cores: list                     # [n_theta][n_current] of QKernel
    cfg: TableTrainConfig
    params_hash: str
    gains: np.ndarray = None        # (n_theta, n_current, 2)
    rls: list = None                # [n_theta][n_current] of RlsState
    iterations: np.ndarray = None   # training iterations per core
    fallback_count: int = 0
    clamped_updates: int = 0

    def __post_init__(self):
        self.theta_nodes = np.asarray(self.theta_nodes, float)
        self.current_nodes = np.asarray(self.current_nodes, float)
        nt, ni = self.theta_nodes.size, self.current_nodes.size
        if nt >= 2 and np.any(np.diff(self.theta_nodes) <= 0):
            raise ValueError("theta nodes must be strictly ascending")
        if ni >= 2 and np.any(np.diff(self.current_nodes) <= 0):
            raise ValueError("current nodes must be strictly ascending")
        if len(self.cores) != nt or any(len(r) != ni for r in self.cores):
            raise ValueError("core grid shape must match the node grids")
        if self.gains is None:
            self.gains = np.zeros((nt, ni, 2))
            for a in range(nt):
                for b in range(ni):
                    self.gains[a, b] = qlearn.policy_improvement(self.cores[a][b])
        if self.rls is None:
            self.rls = [[qlearn.rls_init(self.cfg.online_tau, self.cores[a][b])
                         for b in range(ni)] for a in range(nt)]
        if self.iterations is None:
            self.iterations = np.zeros((nt, ni), int)

    @property
    def shape(self):
        return (self.theta_nodes.size, self.current_nodes.size)

    @property
    def pitch(self) -> float:
        return float(self.theta_nodes[-1] - self.theta_nodes[0])


def _axis_locate(nodes: np.ndarray, value: float, wrap: bool):
    if nodes.size == 1:
        return 0, 0.0
    if wrap:
        # wrapped value lands in [nodes[0], nodes[-1]), never on the top node
        span = nodes[-1] - nodes[0]
        value = nodes[0] + (value - nodes[0]) % span
    else:
        value = min(max(value, nodes[0]), nodes[-1])
    idx = int(np.searchsorted(nodes, value, side="right")) - 1
    if idx >= nodes.size - 1:
        # at (or clamped to) the top node: that node is the lower corner, l = 0
        return nodes.size - 1, 0.0
    idx = max(idx, 0)
    frac = (value - nodes[idx]) / (nodes[idx + 1] - nodes[idx])
    return idx, float(frac)


def locate(table: QCoreTable, theta: float, i: float) -> CellLocation:
    """Find the enclosing cell; theta wraps periodically, current clamps."""
    row, l1 = _axis_locate(table.theta_nodes, theta, wrap=True)
    col, l2 = _axis_locate(table.current_nodes, i, wrap=False)
    return CellLocation(row, col, l1, l2)


def _corner(loc: CellLocation, table: QCoreTable):
    nt, ni = table.shape
    dr = 1 if (loc.l1 > 0.5 and loc.row + 1 < nt) else 0
    dc = 1 if (loc.l2 > 0.5 and loc.col + 1 < ni) else 0
    return loc.row + dr, loc.col + dc


def nearest_core(table: QCoreTable, theta: float, i: float) -> QKernel:
    """Corner kernel of the enclosing cell closest in normalized offsets;
    ties break toward the lower indices."""
    loc = locate(table, theta, i)
    a, b = _corner(loc, table)
    return table.cores[a][b]


def _cell_kernels(table: QCoreTable, loc: CellLocation):
    nt, ni = table.shape
    r1 = min(loc.row + 1, nt - 1)
    c1 = min(loc.col + 1, ni - 1)
    return (table.cores[loc.row][loc.col].G, table.cores[r1][loc.col].G,
            table.cores[loc.row][c1].G, table.cores[r1][c1].G)


def scheduled_q(table: QCoreTable, theta: float, i: float) -> QKernel:
    """Bilinear blend of the four enclosing corner kernels, entrywise.

    Exact at grid nodes, continuous across cell edges, and convex: every
    entry stays inside the range of the corner entries.  Degenerate
    single-row or single-column tables reduce to linear interpolation.
    """
    loc = locate(table, theta, i)
    G00, G10, G01, G11 = _cell_kernels(table, loc)
    l1, l2 = loc.l1, loc.l2
    Gs = ((1 - l1) * (1 - l2) * G00 + l1 * (1 - l2) * G10
          + (1 - l1) * l2 * G01 + l1 * l2 * G11)
    return QKernel((Gs + Gs.T) / 2)


def scheduled_gain(table: QCoreTable, theta: float, i: float) -> np.ndarray:
    """Greedy gain of the scheduled kernel; falls back to the nearest
    core's cached gain if the blended input block is not positive."""
    kernel = scheduled_q(table, theta, i)
    if kernel.G_uu <= 0:
        table.fallback_count += 1
        loc = locate(table, theta, i)
        a, b = _corner(loc, table)
        return table.gains[a, b].copy()
    return kernel.G_uX / kernel.G_uu


def _node_collector(A: float, B: float, cfg: TableTrainConfig,
                    i_span: tuple, i_limit: float, rng):
    """Tuple source for one node: a frozen locally-linear plant sampled at
    random operating points around the cell, with input dither."""
    Q_q = cfg.tracking_weight()
    lo, hi = i_span

    def collect(K, count):
        tuples = []
        for _ in range(count):
            x = rng.uniform(0.0, hi)
            r = rng.uniform(max(lo, 0.1 * hi), hi)
            u = -(K[0] * x + K[1] * r) + cfg.dither * rng.uniform(-1, 1)
            x1 = A * x + B * u
            if abs(x1) > i_limit:
                raise SafetyAbortError(
                    f"training current {x1:.2f} A exceeded the "
                    f"{i_limit:.2f} A safety bound")
            u1 = -(K[0] * x1 + K[1] * r)
            cost = qlearn.stage_cost((x, r), u, Q_q, cfg.r_weight)
            tuples.append(DataTuple(np.array([x, r, u]), np.array([x1, r, u1]), cost))
        return tuples

    return collect


def params_hash(params: MotorParams) -> str:
    payload = ",".join(f"{f.name}={getattr(params, f.name)!r}"
                       for f in fields(params))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def train_table(params: MotorParams, surface: InductanceSurface,
                theta_nodes=None, current_nodes=None,
                cfg: TableTrainConfig = TableTrainConfig()) -> QCoreTable:
    """Train one Q-core per grid node against its frozen local dynamics.

    Each node sees a linear plant with the inductance frozen at that
    node's surface value; the learner itself only ever receives sampled
    tuples.  Any non-converged node is reported with its coordinates and
    the whole table is rejected.
    """
    if theta_nodes is None:
        theta_nodes = np.linspace(0.0, params.rotor_pitch, 16)
    if current_nodes is None:
        current_nodes = np.linspace(0.0, 1.5 * params.i_nominal, 8)
    theta_nodes = np.asarray(theta_nodes, float)
    current_nodes = np.asarray(current_nodes, float)

    qcfg = QTrainConfig(gamma=cfg.gamma, tuples_per_iter=cfg.tuples_per_iter,
                        tol=cfg.tol, max_iters=cfg.max_iters)
    i_limit = cfg.safety_factor * params.i_nominal
    i_span = (float(current_nodes[0]), float(current_nodes[-1]))

    cores = [[None] * current_nodes.size for _ in range(theta_nodes.size)]
    iters = np.zeros((theta_nodes.size, current_nodes.size), int)
    failures = []
    for a, th in enumerate(theta_nodes):
        for b, i_node in enumerate(current_nodes):
            L = inductance_at(surface, th, i_node)
            A = 1 - params.T * params.R_phase / L
            B = params.T / L
            rng = np.random.default_rng([cfg.seed, a, b])
            collect = _node_collector(A, B, cfg, i_span, i_limit, rng)
            try:
                result = qlearn.q_policy_iteration(collect, cfg.K0, qcfg)
            except (qlearn.QTrainError, qlearn.RankDeficientError,
                    qlearn.ExcitationError, SafetyAbortError) as exc:
                failures.append((a, b, str(exc)))
                continue
            cores[a][b] = result.kernel
            iters[a, b] = result.iterations
    if failures:
        raise TableTrainError(failures)
    return QCoreTable(theta_nodes, current_nodes, cores, cfg,
                      params_hash(params), iterations=iters)


def update_core_online(table: QCoreTable, tup: DataTuple,
                       theta: float, i: float) -> bool:
    """One RLS step on the nearest core from a live-trajectory tuple.

    The refreshed gain is rate-limited: an update that would move the
    core's gain by more than the configured clamp (or make its input
    block non-positive) is rejected outright, which keeps the cached
    gain exactly consistent with the stored kernel.  Returns True if the
    update was applied.
    """
    loc = locate(table, theta, i)
    a, b = _corner(loc, table)
    row = qlearn.sym_features(tup.M_k) - table.cfg.gamma * qlearn.sym_features(tup.M_k1)
    state = qlearn.rls_update(table.rls[a][b], row, tup.stage_cost)
    g = state.g_vec
    if g[5] <= 0:
        table.clamped_updates += 1
        return False
    K_new = np.array([g[2], g[4]]) / g[5]
    K_old = table.gains[a, b]
    if np.linalg.norm(K_new - K_old) > table.cfg.gain_clamp * (1 + np.linalg.norm(K_old)):
        table.clamped_updates += 1
        return False
    table.rls[a][b] = state
    table.cores[a][b] = QKernel.from_vec(g)
    table.gains[a, b] = K_new
    return True


def save_table(table: QCoreTable, path) -> None:
    """Persist grid, training config, and cores; round-trips bit-exactly."""
    cfg = table.cfg
    doc = {
        "version": TABLE_FORMAT_VERSION,
        "params_hash": table.params_hash,
        "cfg": {f.name: (list(getattr(cfg, f.name))
                         if f.name == "K0" else getattr(cfg, f.name))
                for f in fields(cfg)},
        "theta_nodes": [float(v) for v in table.theta_nodes],
        "current_nodes": [float(v) for v in table.current_nodes],
        "iterations": table.iterations.tolist(),
        "cores": [[list(map(float, table.cores[a][b].to_vec()))
                   for b in range(table.current_nodes.size)]
                  for a in range(table.theta_nodes.size)],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_table(path) -> QCoreTable:
    """Load a table written by save_table; gains and RLS state are rebuilt."""
    try:
        with open(path) as f:
            doc = json.load(f)
        if doc.get("version") != TABLE_FORMAT_VERSION:
            raise ValueError(f"unsupported table format version {doc.get('version')}")
        cfg_kwargs = dict(doc["cfg"])
        cfg_kwargs["K0"] = tuple(cfg_kwargs["K0"])
        cfg = TableTrainConfig(**cfg_kwargs)
        cores = [[QKernel.from_vec(v) for v in row] for row in doc["cores"]]
        return QCoreTable(np.array(doc["theta_nodes"]),
                          np.array(doc["current_nodes"]),
                          cores, cfg, doc["params_hash"],
                          iterations=np.array(doc["iterations"], int))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: malformed table file ({exc})") from exc


def check_table_compatible(table: QCoreTable, params: MotorParams) -> None:
    expected = params_hash(params)
    if table.params_hash != expected:
        raise TableMismatchError(
            f"table was trained for motor hash {table.params_hash}, "
            f"config gives {expected}; retrain or fix the config")
