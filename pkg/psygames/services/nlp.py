"""
Support enumeration with per-support polynomial programs.

For a fixed support, a profile is a psychological equilibrium exactly when
every supported action earns the pivot action's payoff, no unsupported action
earns more, and each player's probabilities form a distribution. Maximising
social welfare under these constraints gives the best equilibrium of that
support; enumerating supports gives the best equilibrium of the game.
"""
import itertools
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import brentq, least_squares, minimize

from psygames.config import Config
from psygames.exceptions import NoEquilibriumFound, PivotNotInSupport, TooLarge
from psygames.services.expr import PolyExpr, PolySystem, ProbVar, substitute
from psygames.services.game_core import (
    EPS_SUPP,
    EquilibriumCandidate,
    Nfpg,
    StrategyProfile,
    Support,
    enumerate_supports,
    verify_pe,
)

logger = logging.getLogger(__name__)

# --- Local search constants ---
INITIAL_PENALTY = 10.0
MAX_PENALTY = 1e8
STALL_WINDOW = 10
MIN_STEP = 1e-9
# Distinct phase-one end points handed to the SLSQP polish.
MAX_POLISH = 12
# Largest grid the infeasibility certificate will scan.
GRID_CERT_MAX_POINTS = 200_000
# Largest grid the brute-force oracle accepts.
ORACLE_MAX_POINTS = 10 ** 8
ORACLE_MAX_ACTIONS = 3
# Supported probabilities at or below this are reported as zero, by the support
# solver and by the grid oracle alike.
SUPPORT_FLOOR = 1e-7
# Largest indifference residual a refined oracle point may keep, relative to the tolerance.
REFINE_RESIDUAL_RATIO = 1e-3
# Root finding for supports where every mixing player has two actions.
MAX_ROOT_POINTS = 64
ROOT_ZERO_TOL = 1e-10
ROOT_IMAG_TOL = 1e-6

# Older SLSQP builds keep Fortran state between calls.
_SLSQP_LOCK = threading.Lock()


@dataclass(frozen=True)
class SolverConfig:
    """
    Numerical settings shared by every support solve.

    ``eps_lower`` replaces the strict positivity of supported probabilities,
    ``threads`` bounds the worker pool used by ``find_swpe``.
    """
    feas_tol: float = 1e-6
    opt_tol: float = 1e-6
    starts: int = 64
    max_iters: int = 2000
    seed: int = 0
    eps_lower: float = 1e-8
    threads: int = 1
    grid_resolution: int = 40

    def __post_init__(self):
        for name in ('feas_tol', 'opt_tol', 'eps_lower'):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.starts < 1:
            raise ValueError(f"starts must be at least 1, got {self.starts}")
        if self.max_iters < 1 or self.threads < 1:
            raise ValueError("max_iters and threads must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @classmethod
    def from_config(cls, config_class=Config, **overrides) -> 'SolverConfig':
        """Build solver settings from a configuration class, then apply non-None overrides."""
        values = dict(
            feas_tol=config_class.PG_FEAS_TOL,
            opt_tol=config_class.PG_OPT_TOL,
            starts=config_class.PG_STARTS,
            max_iters=config_class.PG_MAX_ITERS,
            seed=config_class.PG_SEED,
            eps_lower=config_class.PG_EPS_LOWER,
            threads=config_class.PG_THREADS,
            grid_resolution=config_class.PG_GRID_CERT_RESOLUTION,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class SolveStatus(str, Enum):
    FEASIBLE = 'feasible'
    INFEASIBLE = 'infeasible'
    INCONCLUSIVE = 'inconclusive'


@dataclass(frozen=True)
class SolveOutcome:
    status: SolveStatus
    candidate: Optional[EquilibriumCandidate] = None
    starts_converged: int = 0
    point: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def feasible(self) -> bool:
        return self.status is SolveStatus.FEASIBLE


@dataclass(frozen=True)
class SupportProgram:
    """
    The welfare-maximisation program of one support.

    ``variables`` holds one probability per supported action; unsupported
    probabilities are already substituted by 0. ``eq_constraints`` must vanish,
    ``ineq_constraints`` must be non-negative, and each block of ``simplex``
    sums to one with every entry at least ``eps_lower``.
    """
    game: Nfpg
    support: Support
    pivots: Tuple[str, ...]
    variables: Tuple[ProbVar, ...]
    objective: PolyExpr
    payoffs: Tuple[PolyExpr, ...]
    eq_constraints: Tuple[PolyExpr, ...]
    ineq_constraints: Tuple[PolyExpr, ...]
    simplex: Tuple[Tuple[ProbVar, ...], ...]


def build_support_program(game: Nfpg, support: Support, pivots: Optional[Sequence[str]] = None) -> SupportProgram:
    """
    Encode the equilibrium conditions of ``support`` as a polynomial program.

    The payoff of each pure action is written with belief variables replaced by
    the program's probability variables, so beliefs match the profile by
    construction.

    Args:
        game (Nfpg): The game.
        support (Support): Actions played with positive probability.
        pivots (Optional[Sequence[str]]): Per-player anchor action; defaults to
            the first supported action of each player.

    Returns:
        SupportProgram: The program for this support.

    Raises:
        PivotNotInSupport: If a pivot is not a supported action of its player.
    """
    if pivots is None:
        pivots = tuple(acts[0] for acts in support.actions)
    pivots = tuple(pivots)
    for i, pivot in enumerate(pivots):
        if pivot not in support.actions[i]:
            raise PivotNotInSupport(
                f"Pivot '{pivot}' of player '{game.players[i]}' is not in support {list(support.actions[i])}")

    zeros = {ProbVar(i, a): 0 for i, acts in enumerate(game.actions) for a in acts if a not in support.actions[i]}
    variables = tuple(ProbVar(i, a) for i, acts in enumerate(support.actions) for a in acts)
    entries = [[substitute(e, zeros) for e in table] for table in game.utility]

    payoffs, eqs, ineqs = [], [], []
    for i, acts in enumerate(game.actions):
        others = [support.actions[j] if j != i else (None,) for j in range(game.n_players)]
        deviation = {}
        for a in acts:
            total = PolyExpr()
            for rest in itertools.product(*others):
                joint = tuple(a if j == i else rest[j] for j in range(game.n_players))
                term = entries[i][game.joint_index(joint)]
                for j, b in enumerate(joint):
                    if j != i:
                        term = term * PolyExpr.var(ProbVar(j, b))
                total = total + term
            deviation[a] = total
        payoff = PolyExpr()
        for a in support.actions[i]:
            payoff = payoff + PolyExpr.var(ProbVar(i, a)) * deviation[a]
        payoffs.append(payoff)
        anchor = deviation[pivots[i]]
        for a in acts:
            if a == pivots[i]:
                continue
            if a in support.actions[i]:
                eqs.append(anchor - deviation[a])
            else:
                ineqs.append(anchor - deviation[a])

    objective = PolyExpr()
    for p in payoffs:
        objective = objective + p
    simplex = tuple(tuple(ProbVar(i, a) for a in acts) for i, acts in enumerate(support.actions))
    return SupportProgram(game, support, pivots, variables, objective, tuple(payoffs), tuple(eqs), tuple(ineqs),
                          simplex)


def support_floor(eps_lower: float) -> float:
    """Cutoff below which a supported probability is reported as zero."""
    return max(SUPPORT_FLOOR, EPS_SUPP, 10 * eps_lower)


class _CompiledProgram:
    """Floating-point view of a SupportProgram over its free variables."""

    def __init__(self, prog: SupportProgram, eps_lower: float):
        self.prog = prog
        self.eps_lower = eps_lower
        fixed = {block[0]: 1 for block in prog.simplex if len(block) == 1}
        self.free = tuple(v for v in prog.variables if v not in fixed)
        index = {v: k for k, v in enumerate(self.free)}
        self.blocks = [np.array([index[v] for v in block]) for block in prog.simplex if len(block) > 1]
        self.n = len(self.free)

        def reduce(polys):
            return [substitute(p, fixed) for p in polys]

        eqs = [p for p in reduce(prog.eq_constraints) if not p.is_zero()]
        ineqs = reduce(prog.ineq_constraints)
        polys = [substitute(prog.objective, fixed)] + reduce(prog.payoffs) + eqs + ineqs
        self.system = PolySystem(polys, self.free)
        k = 1 + len(prog.payoffs)
        self.payoff_rows = np.arange(1, k)
        self.eq = np.arange(k, k + len(eqs))
        self.ineq = np.arange(k + len(eqs), k + len(eqs) + len(ineqs))
        self.constraint_polys = eqs + ineqs
        self.lipschitz = np.array([float(p.coefficient_bound()) for p in self.constraint_polys])
        self.A = np.zeros((len(self.blocks), self.n))
        for r, block in enumerate(self.blocks):
            self.A[r, block] = 1.0

    # --- Geometry ---
    def project(self, X: np.ndarray) -> np.ndarray:
        """Euclidean projection of each row onto the product of eps-bounded simplices."""
        X = np.array(X, dtype=float, copy=True)
        for block in self.blocks:
            X[:, block] = _project_simplex(X[:, block], self.eps_lower)
        return X

    def violations(self, vals: np.ndarray) -> np.ndarray:
        """Per-point largest constraint violation from precomputed values."""
        parts = [np.zeros(vals.shape[0])]
        if len(self.eq):
            parts.append(np.abs(vals[:, self.eq]).max(axis=1))
        if len(self.ineq):
            parts.append(np.maximum(-vals[:, self.ineq], 0).max(axis=1))
        return np.max(np.stack(parts, axis=1), axis=1)

    def residual(self, x: np.ndarray) -> float:
        x = np.atleast_2d(x)
        worst = float(self.violations(self.system.values(x))[0])
        if self.n:
            worst = max(worst, float(np.abs(self.A @ x[0] - 1).max(initial=0.0)),
                        float(np.max(self.eps_lower - x[0], initial=0.0)), float(np.max(x[0] - 1, initial=0.0)))
        return worst

    def objective(self, x: np.ndarray, row: int = 0) -> float:
        return float(self.system.values(np.atleast_2d(x))[0, row])

    # --- Conversion ---
    def profile(self, x: np.ndarray) -> StrategyProfile:
        """Full-game profile for a point; probabilities near the lower bound are snapped to zero."""
        game, support = self.prog.game, self.prog.support
        floor = support_floor(self.eps_lower)
        index = {v: k for k, v in enumerate(self.free)}
        dists = []
        for i, acts in enumerate(game.actions):
            dist = {}
            for a in acts:
                v = ProbVar(i, a)
                if a not in support.actions[i]:
                    dist[a] = 0.0
                elif v in index:
                    dist[a] = float(x[index[v]])
                else:
                    dist[a] = 1.0
            dist = {a: (p if p > floor else 0.0) for a, p in dist.items()}
            total = sum(dist.values())
            dists.append({a: p / total for a, p in dist.items()})
        return StrategyProfile(tuple(dists))

    def point(self, profile: StrategyProfile) -> np.ndarray:
        x = np.array([float(profile.probs[v.player][v.action]) for v in self.free], dtype=float)
        return self.project(x[None, :])[0] if self.n else x


def _project_simplex(Y: np.ndarray, eps: float) -> np.ndarray:
    """Row-wise projection onto {x : x >= eps, sum(x) = 1}."""
    S, m = Y.shape
    radius = 1.0 - m * eps
    Z = Y - eps
    U = -np.sort(-Z, axis=1)
    css = np.cumsum(U, axis=1) - radius
    ranks = np.arange(1, m + 1)
    positive = U - css / ranks > 0
    last = m - 1 - np.argmax(positive[:, ::-1], axis=1)
    theta = css[np.arange(S), last] / (last + 1)
    return np.maximum(Z - theta[:, None], 0.0) + eps


def derive_seed(seed: int, *stream: int) -> int:
    """Independent 64-bit seed for a sub-stream (support index, state, run)."""
    return int(np.random.SeedSequence([seed, *stream]).generate_state(1, dtype=np.uint64)[0])


def _simplex_grid(m: int, resolution: int) -> np.ndarray:
    """All points of the m-simplex whose coordinates are multiples of 1/resolution."""
    if m == 1:
        return np.ones((1, 1))
    rows = []
    for bars in itertools.combinations(range(resolution + m - 1), m - 1):
        edges = (-1,) + bars + (resolution + m - 1,)
        rows.append([edges[k + 1] - edges[k] - 1 for k in range(m)])
    return np.array(rows, dtype=float) / resolution


def _product_grid(grids: Sequence[np.ndarray]) -> np.ndarray:
    points = np.zeros((1, 0))
    for grid in grids:
        points = np.hstack([np.repeat(points, len(grid), axis=0), np.tile(grid, (len(points), 1))])
    return points


def _grid_size(sizes: Sequence[int], resolution: int) -> int:
    return math.prod(math.comb(resolution + m - 1, m - 1) for m in sizes)


def _constant_violation(cp: _CompiledProgram, tol: float) -> bool:
    for k, p in enumerate(cp.constraint_polys):
        if not p.is_constant():
            continue
        value = float(p.constant_term())
        if k < len(cp.eq) and abs(value) > tol:
            return True
        if k >= len(cp.eq) and value < -tol:
            return True
    return False


def _grid_certificate(cp: _CompiledProgram, cfg: SolverConfig) -> bool:
    """
    True when a coarse grid proves the program infeasible.

    Every point of the feasible region lies within 1/R (per coordinate) of a
    grid point, so a constraint with Lipschitz bound L cannot move by more than
    L/R between them.
    """
    resolution = cfg.grid_resolution
    sizes = [len(b) for b in cp.blocks]
    if not cp.constraint_polys or _grid_size(sizes, resolution) > GRID_CERT_MAX_POINTS:
        return False
    grids = [_simplex_grid(len(block), resolution) for block in cp.blocks]
    points = _product_grid(grids)
    columns = np.concatenate(cp.blocks)
    X = np.empty_like(points)
    X[:, columns] = points
    vals = cp.system.values(X)
    slack = cp.lipschitz / resolution
    parts = []
    if len(cp.eq):
        parts.append(np.abs(vals[:, cp.eq]) - slack[:len(cp.eq)])
    if len(cp.ineq):
        parts.append(-vals[:, cp.ineq] - slack[len(cp.eq):])
    margin = np.max(np.concatenate(parts, axis=1), axis=1)
    return bool(margin.min() > cfg.feas_tol)


def _edge_roots(cp: _CompiledProgram, x: np.ndarray, block: int, rows: Sequence[int],
                degree: int) -> Optional[List[float]]:
    """
    Roots along one two-action block of the first equality in ``rows`` that
    does not vanish there, other blocks held at ``x``.

    Returns the probabilities t of the block's second action with
    eps_lower <= t <= 1 - eps_lower, or None when every row vanishes along
    the whole block.
    """
    first, second = cp.blocks[block]
    nodes = 0.5 - 0.5 * np.cos(np.pi * (np.arange(degree + 1) + 0.5) / (degree + 1))
    X = np.repeat(x[None, :], degree + 1, axis=0)
    X[:, first], X[:, second] = 1.0 - nodes, nodes
    vals = cp.system.values(X)[:, cp.eq[list(rows)]]
    for col in range(vals.shape[1]):
        if np.abs(vals[:, col]).max() <= ROOT_ZERO_TOL:
            continue
        coefs = npoly.polytrim(npoly.polyfit(nodes, vals[:, col], degree), ROOT_ZERO_TOL)
        if len(coefs) == 1:
            return []
        roots = npoly.polyroots(coefs)
        real = roots[np.abs(roots.imag) <= ROOT_IMAG_TOL].real
        return sorted({float(t) for t in real if cp.eps_lower <= t <= 1.0 - cp.eps_lower})
    return None


def _root_points(cp: _CompiledProgram) -> Optional[List[np.ndarray]]:
    """
    Every point satisfying the equalities, found one player at a time.

    Applies when every mixing player has exactly two actions and the
    equalities can be ordered so that each brings in one new player's
    probability, as in games where a player's indifference depends only on the
    others' strategies. Returns None when no such order exists or when an
    equality vanishes along a whole edge, which leaves a continuum of
    solutions to the local search.
    """
    if not cp.blocks or any(len(block) != 2 for block in cp.blocks):
        return None
    owner = {cp.free[k]: b for b, block in enumerate(cp.blocks) for k in block}
    polys = cp.constraint_polys[:len(cp.eq)]
    deps = [frozenset(owner[v] for v in p.variables()) for p in polys]
    solved: frozenset = frozenset()
    partial = [np.full(cp.n, 0.5)]
    while len(solved) < len(cp.blocks):
        choice = None
        for b in range(len(cp.blocks)):
            if b in solved:
                continue
            rows = [k for k, d in enumerate(deps) if b in d and d <= solved | {b}]
            if rows:
                choice = (b, rows)
                break
        if choice is None:
            return None
        b, rows = choice
        degree = max(1, max(polys[k].degree() for k in rows))
        following = []
        for x in partial:
            roots = _edge_roots(cp, x, b, rows, degree)
            if roots is None:
                return None
            for t in roots:
                y = x.copy()
                y[cp.blocks[b][0]], y[cp.blocks[b][1]] = 1.0 - t, t
                following.append(y)
        if len(following) > MAX_ROOT_POINTS:
            return None
        partial = following
        solved = solved | {b}
    return partial


def _dirichlet_starts(cp: _CompiledProgram, cfg: SolverConfig) -> np.ndarray:
    X = np.empty((cfg.starts, cp.n))
    for s in range(cfg.starts):
        rng = np.random.default_rng([cfg.seed, s])
        for block in cp.blocks:
            X[s, block] = rng.dirichlet(np.ones(len(block)))
    return cp.project(X)


def _penalty_ascent(cp: _CompiledProgram, X: np.ndarray, cfg: SolverConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Projected-gradient ascent on welfare minus an exact penalty, all starts at once.

    The penalty weight doubles and the step halves whenever a start stops
    improving; a start finishes once feasible with a small projected gradient
    or once its step has collapsed.
    """
    S = X.shape[0]
    rho = np.full(S, INITIAL_PENALTY)
    eta = None
    best = np.full(S, -np.inf)
    idle = np.zeros(S, dtype=int)
    converged = np.zeros(S, dtype=bool)
    for _ in range(cfg.max_iters):
        vals = cp.system.values(X)
        jac = cp.system.jacobian(X)
        eqv = vals[:, cp.eq]
        inv = vals[:, cp.ineq]
        resid = cp.violations(vals)
        merit = vals[:, 0] - rho * (np.abs(eqv).sum(axis=1) + np.maximum(-inv, 0).sum(axis=1))
        penalty_grad = (np.einsum('sp,spn->sn', np.sign(eqv), jac[:, cp.eq, :])
                        - np.einsum('sp,spn->sn', (inv < 0).astype(float), jac[:, cp.ineq, :]))
        grad = jac[:, 0, :] - rho[:, None] * penalty_grad
        if eta is None:
            eta = 0.1 / np.maximum(1.0, np.linalg.norm(grad, axis=1))
        X_next = cp.project(X + eta[:, None] * grad)
        pg_norm = np.linalg.norm(X_next - X, axis=1) / eta
        converged = (resid <= cfg.feas_tol) & (pg_norm <= cfg.opt_tol)

        improved = merit > best + 1e-12
        best = np.where(improved, merit, best)
        idle = np.where(improved, 0, idle + 1)
        stalled = idle >= STALL_WINDOW
        rho = np.where(stalled & (resid > cfg.feas_tol), np.minimum(rho * 2, MAX_PENALTY), rho)
        eta = np.where(stalled, eta * 0.5, eta)
        best = np.where(stalled, -np.inf, best)
        idle = np.where(stalled, 0, idle)

        active = ~converged & (eta > MIN_STEP)
        if not active.any():
            break
        X = np.where(active[:, None], X_next, X)
    return X, converged


def _row_factory(cp: _CompiledProgram, rows: np.ndarray, sign: float = 1.0, offset: float = 0.0):
    def value(x):
        return sign * cp.system.values(x[None, :])[0, rows] - offset
    return value


def _jac_factory(cp: _CompiledProgram, rows: np.ndarray, sign: float = 1.0):
    def jac(x):
        return sign * cp.system.jacobian(x[None, :])[0][rows]
    return jac


def _polish(cp: _CompiledProgram, x0: np.ndarray, cfg: SolverConfig, target: int = 0,
            extra: Sequence[dict] = ()) -> Tuple[np.ndarray, bool]:
    """Maximise row ``target`` with SLSQP from ``x0`` under all program constraints."""
    constraints = []
    if len(cp.eq):
        constraints.append({'type': 'eq', 'fun': _row_factory(cp, cp.eq), 'jac': _jac_factory(cp, cp.eq)})
    if len(cp.ineq):
        constraints.append({'type': 'ineq', 'fun': _row_factory(cp, cp.ineq), 'jac': _jac_factory(cp, cp.ineq)})
    constraints.append({'type': 'eq', 'fun': lambda x: cp.A @ x - 1.0, 'jac': lambda x: cp.A})
    constraints.extend(extra)
    row = np.array([target])
    with _SLSQP_LOCK:
        result = minimize(
            lambda x: float(_row_factory(cp, row, sign=-1.0)(x)[0]),
            x0,
            jac=lambda x: _jac_factory(cp, row, sign=-1.0)(x)[0],
            method='SLSQP',
            bounds=[(cfg.eps_lower, 1.0)] * cp.n,
            constraints=constraints,
            options={'maxiter': 200, 'ftol': 1e-12},
        )
    x = cp.project(np.asarray(result.x, dtype=float)[None, :])[0]
    return x, bool(result.success)


def _candidate(cp: _CompiledProgram, x: np.ndarray, cfg: SolverConfig,
               support_index: int = -1) -> Optional[EquilibriumCandidate]:
    """Snap, re-derive the support and verify; re-polish on the reduced support if needed."""
    game = cp.prog.game
    profile = cp.profile(x)
    ok, residual = verify_pe(game, profile, cfg.feas_tol)
    if ok:
        return EquilibriumCandidate.from_profile(game, profile, residual, support_index)
    reduced = profile.support(game)
    if reduced == cp.prog.support:
        return None
    sub = _CompiledProgram(build_support_program(game, reduced), cfg.eps_lower)
    y = sub.point(profile)
    if sub.n:
        y, _ = _polish(sub, y, cfg)
    if sub.residual(y) > cfg.feas_tol:
        return None
    profile = sub.profile(y)
    ok, residual = verify_pe(game, profile, cfg.feas_tol)
    if not ok:
        return None
    return EquilibriumCandidate.from_profile(game, profile, residual, support_index)


def solve_program(prog: SupportProgram, cfg: SolverConfig) -> SolveOutcome:
    """
    Solve one support program by multi-start local search.

    Infeasibility is reported only with a certificate: a violated constant
    constraint, or a grid scan whose best point stays further from feasibility
    than the Lipschitz bound allows. Without a certificate, failing to find a
    feasible point yields ``Inconclusive``.

    Args:
        prog (SupportProgram): Program of a single support.
        cfg (SolverConfig): Tolerances, starts and seed.

    Returns:
        SolveOutcome: Status, best verified candidate and number of converged starts.
    """
    cp = _CompiledProgram(prog, cfg.eps_lower)
    label = prog.support.label()
    if _constant_violation(cp, cfg.feas_tol):
        logger.debug(f"Support {label}: constant constraint violated")
        return SolveOutcome(SolveStatus.INFEASIBLE)

    if cp.n == 0:
        x = np.zeros(0)
        if cp.residual(x) > cfg.feas_tol:
            return SolveOutcome(SolveStatus.INFEASIBLE)
        candidate = _candidate(cp, x, cfg)
        if candidate is None:
            return SolveOutcome(SolveStatus.INFEASIBLE)
        return SolveOutcome(SolveStatus.FEASIBLE, candidate, 1, x)

    points = _root_points(cp)
    if points is not None:
        best = None
        for x in points:
            candidate = _candidate(cp, x, cfg) if cp.residual(x) <= cfg.feas_tol else None
            if candidate is not None and (best is None or candidate.welfare > best[0].welfare + 1e-12):
                best = (candidate, x)
        if best is None:
            logger.debug(f"Support {label}: none of {len(points)} indifference roots is feasible")
            return SolveOutcome(SolveStatus.INFEASIBLE)
        logger.debug(f"Support {label}: feasible by root finding, welfare {best[0].welfare:.9g}")
        return SolveOutcome(SolveStatus.FEASIBLE, best[0], len(points), best[1])

    if _grid_certificate(cp, cfg):
        logger.debug(f"Support {label}: grid certificate of infeasibility")
        return SolveOutcome(SolveStatus.INFEASIBLE)

    X, converged = _penalty_ascent(cp, _dirichlet_starts(cp, cfg), cfg)
    vals = cp.system.values(X)
    resid = cp.violations(vals)
    keys = [tuple(row) for row in np.round(X, 4)]
    clusters: Dict[tuple, List[int]] = {}
    for s, key in enumerate(keys):
        clusters.setdefault(key, []).append(s)
    ranked = sorted(clusters.values(), key=lambda members: (resid[members[0]] > cfg.feas_tol, -vals[members[0], 0],
                                                           members[0]))

    best: Optional[Tuple[EquilibriumCandidate, np.ndarray]] = None
    starts_converged = 0
    for members in ranked[:MAX_POLISH]:
        s = members[0]
        x, _ = _polish(cp, X[s], cfg)
        if cp.residual(x) > cfg.feas_tol:
            if not converged[s]:
                continue
            x = X[s]
        candidate = _candidate(cp, x, cfg)
        if candidate is None:
            continue
        starts_converged += len(members)
        if best is None or candidate.welfare > best[0].welfare + 1e-12:
            best = (candidate, x)

    if best is None:
        logger.debug(f"Support {label}: no start converged")
        return SolveOutcome(SolveStatus.INCONCLUSIVE)
    logger.debug(f"Support {label}: feasible, welfare {best[0].welfare:.9g}, {starts_converged} starts converged")
    return SolveOutcome(SolveStatus.FEASIBLE, best[0], starts_converged, best[1])


def lexicographic_refine(prog: SupportProgram, cfg: SolverConfig, welfare_opt: float,
                         start: Optional[EquilibriumCandidate] = None) -> SolveOutcome:
    """
    Among points of ``prog`` with welfare at least ``welfare_opt - opt_tol``,
    maximise player 0's payoff, fix it, then player 1's, and so on.

    Args:
        prog (SupportProgram): Program whose feasible set is searched.
        cfg (SolverConfig): Solver settings; ``opt_tol`` is the gap between levels.
        welfare_opt (float): Welfare the refined point must (almost) keep.
        start (Optional[EquilibriumCandidate]): Feasible starting equilibrium. When
            omitted the program is solved first.

    Returns:
        SolveOutcome: The refined outcome (unchanged when nothing improves).
    """
    cp = _CompiledProgram(prog, cfg.eps_lower)
    if start is None:
        outcome = solve_program(prog, cfg)
        if not outcome.feasible:
            return outcome
        start = outcome.candidate
    x = cp.point(start.profile)
    if cp.n == 0:
        return SolveOutcome(SolveStatus.FEASIBLE, start, 1, x)

    floor = welfare_opt - cfg.opt_tol
    points = _root_points(cp)
    if points is not None:
        # Finitely many equilibria on this support: compare them directly.
        best = start
        for y in points:
            candidate = _candidate(cp, y, cfg, start.support_index) if cp.residual(y) <= cfg.feas_tol else None
            if (candidate is not None and candidate.support == start.support and candidate.welfare >= floor
                    and _lexicographically_above(candidate.payoffs, best.payoffs, cfg.opt_tol)):
                best = candidate
        return SolveOutcome(SolveStatus.FEASIBLE, best, 1, cp.point(best.profile))

    extra = [{'type': 'ineq', 'fun': _row_factory(cp, np.array([0]), offset=floor),
              'jac': _jac_factory(cp, np.array([0]))}]
    for row in cp.payoff_rows:
        y, _ = _polish(cp, x, cfg, target=int(row), extra=extra)
        if (cp.residual(y) <= cfg.feas_tol and cp.objective(y) >= floor - cfg.feas_tol
                and cp.objective(y, row) >= cp.objective(x, row)):
            x = y
        level = cp.objective(x, row) - cfg.opt_tol
        extra.append({'type': 'ineq', 'fun': _row_factory(cp, np.array([row]), offset=level),
                      'jac': _jac_factory(cp, np.array([row]))})

    candidate = _candidate(cp, x, cfg, start.support_index)
    if candidate is None or candidate.support != start.support:
        return SolveOutcome(SolveStatus.FEASIBLE, start, 1, cp.point(start.profile))
    return SolveOutcome(SolveStatus.FEASIBLE, candidate, 1, x)


def _lexicographically_above(a: Sequence[float], b: Sequence[float], tol: float) -> bool:
    for ua, ub in zip(a, b):
        if abs(ua - ub) > tol:
            return ua > ub
    return False


def _better(a: EquilibriumCandidate, b: EquilibriumCandidate, tol: float) -> bool:
    """Welfare first, then payoffs in player order, then support order."""
    if abs(a.welfare - b.welfare) > tol:
        return a.welfare > b.welfare
    for ua, ub in zip(a.payoffs, b.payoffs):
        if abs(ua - ub) > tol:
            return ua > ub
    return a.support_index < b.support_index


def find_swpe(game: Nfpg,
              cfg: Optional[SolverConfig] = None) -> Tuple[EquilibriumCandidate, List[EquilibriumCandidate]]:
    """
    Social-welfare-optimal psychological equilibrium by support enumeration.

    Supports are solved independently (concurrently when ``cfg.threads > 1``)
    with per-support seeds, and merged in support order, so results do not
    depend on the thread count. Candidates are de-duplicated by their derived
    support, keeping the highest welfare.

    Args:
        game (Nfpg): The game to solve.
        cfg (Optional[SolverConfig]): Solver settings.

    Returns:
        Tuple[EquilibriumCandidate, List[EquilibriumCandidate]]: The selected
        equilibrium and every candidate in support order.

    Raises:
        NoEquilibriumFound: If no support produced a verified equilibrium.
    """
    best, candidates = _find_swpe_cached(game, cfg or SolverConfig())
    return best, list(candidates)


@lru_cache(maxsize=4096)
def _find_swpe_cached(game: Nfpg, cfg: SolverConfig) -> Tuple[EquilibriumCandidate, Tuple[EquilibriumCandidate, ...]]:
    supports = list(enumerate_supports(game))
    order = {s: k for k, s in enumerate(supports)}

    def solve_one(item):
        k, support = item
        return solve_program(build_support_program(game, support), replace(cfg, seed=derive_seed(cfg.seed, k)))

    if cfg.threads > 1 and len(supports) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as executor:
            outcomes = list(executor.map(solve_one, enumerate(supports)))
    else:
        outcomes = [solve_one(item) for item in enumerate(supports)]

    inconclusive = sum(1 for o in outcomes if o.status is SolveStatus.INCONCLUSIVE)
    by_support: Dict[Support, EquilibriumCandidate] = {}
    for o in outcomes:
        if not o.feasible:
            continue
        c = replace(o.candidate, support_index=order[o.candidate.support])
        held = by_support.get(c.support)
        if held is None or c.welfare > held.welfare + cfg.opt_tol:
            by_support[c.support] = c

    if not by_support:
        logger.warning(f"No equilibrium for '{game.name or 'game'}': {inconclusive} of {len(supports)} supports "
                       f"inconclusive")
        raise NoEquilibriumFound(f"No psychological equilibrium found ({inconclusive} inconclusive supports)",
                                 inconclusive=inconclusive)

    candidates = sorted(by_support.values(), key=lambda c: c.support_index)
    top = max(c.welfare for c in candidates)
    best = None
    for k, c in enumerate(candidates):
        if c.welfare < top - cfg.opt_tol:
            continue
        refined = lexicographic_refine(build_support_program(game, c.support), cfg, top, start=c).candidate
        candidates[k] = refined
        if best is None or _better(refined, best, cfg.opt_tol):
            best = refined
    logger.info(f"Solved '{game.name or 'game'}': {len(candidates)} equilibria, best welfare {best.welfare:.9g}"
                f"{f', {inconclusive} inconclusive supports' if inconclusive else ''}")
    return best, tuple(candidates)


# --- Brute-force oracle ---

def _deviation_tables(systems: Sequence[PolySystem], sizes: Sequence[int], X: np.ndarray,
                      blocks: Sequence[slice]) -> List[np.ndarray]:
    """Per player, payoff of every pure action against the others (shape (points, actions))."""
    tables = []
    S = X.shape[0]
    for i, system in enumerate(systems):
        T = system.values(X).reshape((S,) + tuple(sizes))
        for j, block in enumerate(blocks):
            if j == i:
                continue
            shape = [S] + [1] * len(sizes)
            shape[j + 1] = sizes[j]
            T = T * X[:, block].reshape(shape)
        axes = tuple(k + 1 for k in range(len(sizes)) if k != i)
        tables.append(T.sum(axis=axes) if axes else T)
    return tables


def _grid_residuals(tables: Sequence[np.ndarray], X: np.ndarray, blocks: Sequence[slice]) -> np.ndarray:
    worst = np.zeros(X.shape[0])
    for D, block in zip(tables, blocks):
        sigma = X[:, block]
        U = (sigma * D).sum(axis=1)
        gap = D - U[:, None]
        contribution = np.where(sigma > EPS_SUPP, np.abs(gap), np.maximum(gap, 0.0))
        worst = np.maximum(worst, contribution.max(axis=1))
    return worst


def _refine_point(game: Nfpg, systems, sizes, blocks, support: Support, x0: np.ndarray,
                  resolution: int) -> Tuple[np.ndarray, float]:
    """Solve the indifference conditions of ``support`` near a grid point; also return the largest residual."""
    columns = [np.array([blocks[i].start + game.actions[i].index(a) for a in acts])
               for i, acts in enumerate(support.actions)]
    unknown = np.concatenate(columns)

    def equations(z):
        X = np.zeros((1, x0.size))
        X[0, unknown] = z
        tables = _deviation_tables(systems, sizes, X, blocks)
        rows = []
        for i, cols in enumerate(columns):
            local = cols - blocks[i].start
            D = tables[i][0]
            rows.append(np.array([X[0, cols].sum() - 1.0]))
            rows.append(D[local[1:]] - D[local[0]])
        return np.concatenate(rows)

    z0 = x0[unknown]
    mixed = [k for k, cols in enumerate(columns) if len(cols) > 1]
    if len(mixed) == 1 and len(columns[mixed[0]]) == 2:
        # One free probability: bisect the indifference condition.
        offset = sum(len(c) for c in columns[:mixed[0]])

        def gap(p):
            z = z0.copy()
            z[offset], z[offset + 1] = 1.0 - p, p
            return equations(z)[offset + 1]

        p0 = z0[offset + 1]
        lo, hi = max(p0 - 1.0 / resolution, 1e-12), min(p0 + 1.0 / resolution, 1 - 1e-12)
        if gap(lo) * gap(hi) < 0:
            p = brentq(gap, lo, hi, xtol=1e-12)
            z = z0.copy()
            z[offset], z[offset + 1] = 1.0 - p, p
            X = np.zeros_like(x0)
            X[unknown] = z
            return X, float(np.abs(equations(z)).max())
    result = least_squares(equations, z0, bounds=(0.0, 1.0), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    X = np.zeros_like(x0)
    X[unknown] = result.x
    return X, float(np.abs(equations(result.x)).max())


def grid_oracle(game: Nfpg, resolution: int, tol: float = 1e-6, per_support: int = 3,
                floor: float = SUPPORT_FLOOR) -> List[EquilibriumCandidate]:
    """
    Brute-force equilibrium search on a uniform grid of mixed profiles.

    Grid points whose equilibrium residual is within ``tol`` plus the grid's
    Lipschitz slack are grouped by support; the best few of each support are
    refined by solving the support's indifference conditions. A refined
    point is kept when it solves those conditions, every supported probability
    stays above ``floor``, and it passes ``verify_pe`` at ``tol`` on the same
    support. Points on the edge of a smaller support are thereby left to that
    support.

    Args:
        game (Nfpg): Game with at most three actions per player.
        resolution (int): Grid step is 1/resolution; at least 10.
        tol (float): Verification tolerance of refined points.
        per_support (int): Grid points refined per support.
        floor (float): Cutoff below which a probability counts as zero; the
            support solver reports its candidates with the same cutoff.

    Returns:
        List[EquilibriumCandidate]: One candidate per support, in support order.

    Raises:
        TooLarge: If the grid exceeds 10^8 points.
    """
    if resolution < 10:
        raise ValueError(f"Grid resolution must be at least 10, got {resolution}")
    sizes = [len(acts) for acts in game.actions]
    if max(sizes) > ORACLE_MAX_ACTIONS:
        raise ValueError(f"The grid oracle handles at most {ORACLE_MAX_ACTIONS} actions per player")
    total = _grid_size(sizes, resolution)
    if total > ORACLE_MAX_POINTS:
        raise TooLarge(f"Grid of {total} points exceeds the limit of {ORACLE_MAX_POINTS}")

    variables = game.prob_vars()
    systems = [PolySystem(table, variables) for table in game.utility]
    starts = np.cumsum([0] + sizes)
    blocks = [slice(int(starts[i]), int(starts[i + 1])) for i in range(len(sizes))]
    lipschitz = 0.0
    for table in game.utility:
        bound = sum(float(e.coefficient_bound()) + float(sum(abs(c) for c in e.terms.values())) * game.n_players
                    for e in table)
        lipschitz = max(lipschitz, bound)
    screen = tol + 3.0 * lipschitz / resolution

    grids = [_simplex_grid(m, resolution) for m in sizes]
    rest = _product_grid(grids[1:])
    chunk = max(1, 200_000 // max(1, len(rest)))
    weights = 1 << np.arange(sum(sizes), dtype=np.int64)
    shortlist: Dict[int, List[Tuple[float, np.ndarray]]] = {}
    for begin in range(0, len(grids[0]), chunk):
        head = grids[0][begin:begin + chunk]
        X = np.hstack([np.repeat(head, len(rest), axis=0), np.tile(rest, (len(head), 1))])
        residuals = _grid_residuals(_deviation_tables(systems, sizes, X, blocks), X, blocks)
        passing = np.flatnonzero(residuals <= screen)
        codes = (X[passing] > EPS_SUPP).astype(np.int64) @ weights
        for code in np.unique(codes):
            members = passing[codes == code]
            members = members[np.argsort(residuals[members], kind='stable')[:per_support]]
            bucket = shortlist.setdefault(int(code), [])
            bucket.extend((float(residuals[s]), X[s].copy()) for s in members)
            bucket.sort(key=lambda item: item[0])
            del bucket[per_support:]

    order = {s: k for k, s in enumerate(enumerate_supports(game))}
    found: Dict[Support, EquilibriumCandidate] = {}
    for code, bucket in shortlist.items():
        mask = [bool(code >> k & 1) for k in range(sum(sizes))]
        support = Support(tuple(tuple(a for k, a in enumerate(acts) if mask[blocks[i].start + k])
                                for i, acts in enumerate(game.actions)))
        for _, x0 in bucket:
            x, unsolved = _refine_point(game, systems, sizes, blocks, support, x0, resolution)
            if unsolved > REFINE_RESIDUAL_RATIO * tol:
                continue
            dists = []
            for i, acts in enumerate(game.actions):
                probs = np.clip(x[blocks[i]], 0.0, None)
                probs = np.where(probs > floor, probs, 0.0)
                if probs.sum() <= 0:
                    break
                dists.append({a: float(p) for a, p in zip(acts, probs / probs.sum())})
            if len(dists) < game.n_players:
                continue
            profile = StrategyProfile(tuple(dists))
            if profile.support(game) != support:
                continue
            ok, residual = verify_pe(game, profile, tol)
            if not ok:
                continue
            candidate = EquilibriumCandidate.from_profile(game, profile, residual, order[support])
            held = found.get(support)
            if held is None or candidate.welfare > held.welfare:
                found[support] = candidate
    return sorted(found.values(), key=lambda c: c.support_index)
