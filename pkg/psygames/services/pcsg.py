"""
Psychological concurrent stochastic games (PCSGs) over a finite horizon.

Each state carries its own normal-form psychological game: action rewards are
polynomials in the probabilities of the actions available in that state.
Backward induction solves one stage game per (steps remaining, state), feeding
the chosen equilibrium's payoffs back as continuation values.
"""
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from psygames.exceptions import (
    InvalidModel,
    MissingContinuation,
    NoEquilibriumFound,
    UnknownVariable,
    UnreachableState,
)
from psygames.services.expr import IDLE_ACTION, PolyExpr, ProbVar
from psygames.services.game_core import EquilibriumCandidate, Nfpg
from psygames.services.nlp import SolverConfig, find_swpe

logger = logging.getLogger(__name__)

State = Tuple[int, ...]
JointAction = Tuple[str, ...]


@dataclass(frozen=True)
class Pcsg:
    """
    A PCSG given by callables over valuations of its integer state variables.

    ``actions_fn`` may return an empty tuple for a player, who then idles.
    ``transition_fn`` returns a distribution over successor states;
    ``action_reward_fn(i, s, joint, vocab)`` returns player i's reward
    polynomial over ``vocab``, the probability variables of state ``s``.
    """
    name: str
    players: Tuple[str, ...]
    variables: Tuple[str, ...]
    initial: State
    actions_fn: Callable[[State], Sequence[Sequence[str]]]
    transition_fn: Callable[[State, JointAction], Mapping[State, Fraction]]
    action_reward_fn: Callable[[int, State, JointAction, Sequence[ProbVar]], PolyExpr]
    state_reward_fn: Callable[[int, State], Fraction]
    _avail_cache: Dict[State, Tuple[Tuple[str, ...], ...]] = field(default_factory=dict, compare=False, repr=False)
    _succ_cache: Dict[Tuple[State, JointAction], Dict[State, Fraction]] = field(
        default_factory=dict, compare=False, repr=False)

    @property
    def n_players(self) -> int:
        return len(self.players)

    def avail(self, s: State) -> Tuple[Tuple[str, ...], ...]:
        cached = self._avail_cache.get(s)
        if cached is None:
            acts = self.actions_fn(s)
            cached = tuple(tuple(a) if a else (IDLE_ACTION,) for a in acts)
            self._avail_cache[s] = cached
        return cached

    def joint_actions(self, s: State) -> List[JointAction]:
        return list(itertools.product(*self.avail(s)))

    def vocab(self, s: State) -> List[ProbVar]:
        return [ProbVar(i, a) for i, acts in enumerate(self.avail(s)) for a in acts]

    def transition(self, s: State, joint: JointAction) -> Dict[State, Fraction]:
        """
        Successor distribution with zero-probability targets removed and coincident targets merged.

        Raises:
            InvalidModel: If the probabilities do not sum to exactly one.
        """
        key = (s, joint)
        cached = self._succ_cache.get(key)
        if cached is None:
            cached = {}
            for target, p in self.transition_fn(s, joint).items():
                if p:
                    cached[tuple(target)] = cached.get(tuple(target), Fraction(0)) + Fraction(p)
            total = sum(cached.values(), Fraction(0))
            if total != 1:
                raise InvalidModel(f"Transition probabilities from {s} under {joint} sum to {total}, not 1")
            self._succ_cache[key] = cached
        return cached

    def action_reward(self, player: int, s: State, joint: JointAction) -> PolyExpr:
        vocab = self.vocab(s)
        reward = self.action_reward_fn(player, s, joint, vocab)
        stray = reward.variables() - set(vocab)
        if stray:
            # Rewards may only depend on the strategies of the current state.
            raise UnknownVariable(sorted(str(v) for v in stray)[0])
        return reward

    def state_reward(self, player: int, s: State) -> Fraction:
        return Fraction(self.state_reward_fn(player, s))

    def describe(self, s: State) -> str:
        return '(' + ','.join(f"{n}={v}" for n, v in zip(self.variables, s)) + ')'


Continuation = Sequence[Mapping[State, Union[float, Fraction]]]


def build_stage_game(g: Pcsg, s: State, cont: Continuation) -> Nfpg:
    """
    The normal-form psychological game played in state ``s``.

    Player i's entry at joint action a is the action reward plus the state
    reward plus the expected continuation value of the successor state.

    Args:
        g (Pcsg): The stochastic game.
        s (State): Current state.
        cont (Continuation): Per-player continuation value of each successor.

    Returns:
        Nfpg: The stage game.

    Raises:
        MissingContinuation: If a successor of ``s`` has no continuation value.
    """
    acts = g.avail(s)
    tables = [[] for _ in g.players]
    for joint in itertools.product(*acts):
        successors = g.transition(s, joint)
        for i in range(g.n_players):
            expected = Fraction(0)
            for target, p in successors.items():
                try:
                    value = cont[i][target]
                except KeyError:
                    raise MissingContinuation(target) from None
                expected += p * Fraction(value)
            tables[i].append(g.action_reward(i, s, joint) + (g.state_reward(i, s) + expected))
    return Nfpg(g.players, acts, tuple(tuple(t) for t in tables), name=f"{g.name}{g.describe(s)}")


def reachable_layers(g: Pcsg, k: int) -> List[List[State]]:
    """States reachable in exactly d steps, for d = 0..k, each layer sorted."""
    layers = [[tuple(g.initial)]]
    for _ in range(k):
        frontier = set()
        for s in layers[-1]:
            for joint in g.joint_actions(s):
                frontier.update(g.transition(s, joint))
        layers.append(sorted(frontier))
    return layers


def model_stats(g: Pcsg, k: int) -> Tuple[int, int]:
    """
    Count states reachable within ``k`` steps and the transitions among them.

    A transition is a distinct (state, joint action, successor) triple with
    nonzero probability.
    """
    reachable = set()
    for layer in reachable_layers(g, k):
        reachable.update(layer)
    transitions = 0
    for s in reachable:
        for joint in g.joint_actions(s):
            transitions += sum(1 for target in g.transition(s, joint) if target in reachable)
    return len(reachable), transitions


@dataclass(frozen=True)
class SwOptimal:
    """Keep the social-welfare-optimal equilibrium of every stage game."""
    pass


@dataclass(frozen=True)
class RandomUniform:
    """Pick uniformly among the stage game's equilibrium candidates."""
    seed: int = 0


Selection = Union[SwOptimal, RandomUniform]


@dataclass
class ValueTable:
    """Values and chosen equilibria indexed by (steps remaining, state)."""
    horizon: int
    initial: State
    players: Tuple[str, ...]
    values: Dict[Tuple[int, State], Tuple[float, ...]] = field(default_factory=dict)
    strategies: Dict[Tuple[int, State], EquilibriumCandidate] = field(default_factory=dict)
    layers: List[List[State]] = field(default_factory=list)

    def value(self, t: int, s: State) -> Tuple[float, ...]:
        """
        Value of ``s`` with ``t`` steps remaining.

        Only states the process can occupy with ``t`` steps remaining, those
        reachable in exactly k-t steps, carry values; other lookups raise
        UnreachableState.
        """
        if t == 0:
            return tuple(0.0 for _ in self.players)
        try:
            return self.values[(t, tuple(s))]
        except KeyError:
            raise UnreachableState(t, s) from None

    @property
    def game_value(self) -> Tuple[float, ...]:
        return self.value(self.horizon, self.initial)

    def states(self) -> List[State]:
        seen = set()
        for layer in self.layers:
            seen.update(layer)
        return sorted(seen)


def _select(candidates: Sequence[EquilibriumCandidate], best: EquilibriumCandidate, select: Selection,
            t: int, position: int) -> EquilibriumCandidate:
    if isinstance(select, RandomUniform):
        rng = np.random.default_rng([select.seed, t, position])
        return candidates[int(rng.integers(len(candidates)))]
    return best


def backward_induction(g: Pcsg, k: int, cfg: Optional[SolverConfig] = None,
                       select: Selection = SwOptimal()) -> ValueTable:
    """
    Solve the first ``k`` steps of ``g`` by backward induction.

    Values start at zero with no steps remaining. For t = 1..k, every state
    reachable in exactly k-t steps gets a stage game built from the values at
    t-1, and the selected equilibrium's payoffs become its value at t. States of
    one layer are solved concurrently when ``cfg.threads > 1``.

    A state reachable within k-t steps but not in exactly k-t is never occupied
    with t steps remaining, so its value there cannot affect the game value and
    is not computed.

    Args:
        g (Pcsg): The game.
        k (int): Horizon, at least 1.
        cfg (Optional[SolverConfig]): Solver settings.
        select (Selection): ``SwOptimal()`` or ``RandomUniform(seed)``.

    Returns:
        ValueTable: Values and strategies; ``game_value`` is the initial state's value.

    Raises:
        NoEquilibriumFound: With the offending (t, state) when a stage game has no equilibrium.
    """
    if k < 1:
        raise ValueError(f"Horizon must be at least 1, got {k}")
    cfg = cfg or SolverConfig()
    layers = reachable_layers(g, k)
    table = ValueTable(k, tuple(g.initial), g.players, layers=layers)
    zero = tuple(0.0 for _ in g.players)
    previous = {s: zero for s in layers[k]}
    stage_cfg = replace(cfg, threads=1)

    for t in range(1, k + 1):
        states = layers[k - t]
        cont = [{s: v[i] for s, v in previous.items()} for i in range(g.n_players)]
        started = time.perf_counter()

        def solve_state(item):
            position, s = item
            game = build_stage_game(g, s, cont)
            try:
                best, candidates = find_swpe(game, stage_cfg)
            except NoEquilibriumFound as e:
                raise NoEquilibriumFound("Stage game has no equilibrium", e.inconclusive,
                                         where=(t, g.describe(s))) from e
            return _select(candidates, best, select, t, position)

        if cfg.threads > 1 and len(states) > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as executor:
                chosen = list(executor.map(solve_state, enumerate(states)))
        else:
            chosen = [solve_state(item) for item in enumerate(states)]

        current = {}
        for s, candidate in zip(states, chosen):
            table.strategies[(t, s)] = candidate
            table.values[(t, s)] = candidate.payoffs
            current[s] = candidate.payoffs
        previous = current
        logger.debug(f"Layer t={t}: {len(states)} states in {time.perf_counter() - started:.3f}s")
    return table


StateClassifier = Callable[[int, State], str]


def step_class(depth: int, s: State) -> str:
    """Default state class: the number of steps already taken."""
    return f"step{depth}"


@dataclass
class ExperimentReport:
    """
    Aggregates over repeated backward induction with random equilibrium selection.

    ``action_probabilities`` averages each action over all decision states of a
    run; ``class_probabilities`` breaks the same average down by state class,
    as ``{state class: {action: probability}}``.
    """
    runs: int
    players: Tuple[str, ...]
    initial_utilities: List[Tuple[float, ...]]
    action_probabilities: List[Dict[str, float]]
    utility_mean: Tuple[float, ...] = ()
    utility_std: Tuple[float, ...] = ()
    action_mean: Dict[str, float] = field(default_factory=dict)
    action_std: Dict[str, float] = field(default_factory=dict)
    class_probabilities: List[Dict[str, Dict[str, float]]] = field(default_factory=list)
    class_mean: Dict[str, Dict[str, float]] = field(default_factory=dict)
    class_std: Dict[str, Dict[str, float]] = field(default_factory=dict)


def _reach_weighted(g: Pcsg, table: ValueTable,
                    classify: StateClassifier) -> Tuple[Dict[str, float], Dict[str, Dict[str, float]]]:
    k = table.horizon
    weighted: Dict[Tuple[str, str], float] = {}
    mass: Dict[Tuple[str, str], float] = {}
    dist = {table.initial: 1.0}
    for depth in range(k):
        t = k - depth
        following: Dict[State, float] = {}
        for s, w in dist.items():
            candidate = table.strategies[(t, s)]
            acts = g.avail(s)
            label = classify(depth, s)
            for i, player_acts in enumerate(acts):
                if player_acts == (IDLE_ACTION,):
                    continue
                for a in player_acts:
                    key = (label, a)
                    weighted[key] = weighted.get(key, 0.0) + w * float(candidate.profile.probs[i][a])
                    mass[key] = mass.get(key, 0.0) + w
            for joint in itertools.product(*acts):
                p_joint = w
                for i, a in enumerate(joint):
                    p_joint *= float(candidate.profile.probs[i][a])
                if p_joint <= 0:
                    continue
                for target, p in g.transition(s, joint).items():
                    following[target] = following.get(target, 0.0) + p_joint * float(p)
        dist = following

    overall: Dict[str, float] = {}
    by_class: Dict[str, Dict[str, float]] = {}
    totals: Dict[str, List[float]] = {}
    for (label, a), value in weighted.items():
        if mass[(label, a)] <= 0:
            continue
        by_class.setdefault(label, {})[a] = value / mass[(label, a)]
        total = totals.setdefault(a, [0.0, 0.0])
        total[0] += value
        total[1] += mass[(label, a)]
    for a in sorted(totals):
        overall[a] = totals[a][0] / totals[a][1]
    return overall, {label: dict(sorted(actions.items())) for label, actions in by_class.items()}


def reach_weighted_actions(g: Pcsg, table: ValueTable) -> Dict[str, float]:
    """
    Average probability of each action over decision states, weighted by the
    probability of reaching the state under the stored strategies.
    """
    return _reach_weighted(g, table, step_class)[0]


def _mean_std(series: Sequence[Dict[str, float]], names: Sequence[str]) -> Tuple[Dict[str, float], Dict[str, float]]:
    mean, std = {}, {}
    for a in names:
        values = np.array([run.get(a, 0.0) for run in series], dtype=float)
        mean[a] = float(values.mean())
        std[a] = float(values.std())
    return mean, std


def run_experiments(g: Pcsg, k: int, runs: int, cfg: Optional[SolverConfig] = None, seed: int = 0,
                    classify: StateClassifier = step_class) -> ExperimentReport:
    """
    Repeat backward induction with uniformly random equilibrium selection.

    Run r uses ``RandomUniform(seed + r)``. The report holds each run's initial
    utilities and reach-weighted action probabilities, overall and per state
    class, and their means and (population) standard deviations. Class
    statistics use only the runs that reach the class.

    Args:
        g (Pcsg): The game.
        k (int): Horizon.
        runs (int): Number of runs, at least 1.
        cfg (Optional[SolverConfig]): Solver settings.
        seed (int): Seed of the first run.
        classify (StateClassifier): Maps (steps taken, state) to a class label.

    Raises:
        ValueError: If ``runs`` is less than 1.
    """
    if runs < 1:
        raise ValueError(f"runs must be at least 1, got {runs}")
    cfg = cfg or SolverConfig()
    utilities, actions, classes = [], [], []
    for r in range(runs):
        table = backward_induction(g, k, cfg, RandomUniform(seed + r))
        utilities.append(tuple(float(u) for u in table.game_value))
        overall, by_class = _reach_weighted(g, table, classify)
        actions.append(overall)
        classes.append(by_class)
        logger.info(f"Run {r + 1}/{runs}: initial utilities {utilities[-1]}")

    values = np.array(utilities, dtype=float)
    action_mean, action_std = _mean_std(actions, sorted({a for run in actions for a in run}))
    class_mean, class_std = {}, {}
    labels = list(dict.fromkeys(label for run in classes for label in run))
    for label in labels:
        names = sorted({a for run in classes for a in run.get(label, {})})
        reached = [run[label] for run in classes if label in run]
        class_mean[label], class_std[label] = _mean_std(reached, names)
    return ExperimentReport(
        runs=runs,
        players=g.players,
        initial_utilities=utilities,
        action_probabilities=actions,
        utility_mean=tuple(float(v) for v in values.mean(axis=0)),
        utility_std=tuple(float(v) for v in values.std(axis=0)),
        action_mean=action_mean,
        action_std=action_std,
        class_probabilities=classes,
        class_mean=class_mean,
        class_std=class_std,
    )
