"""
Normal-form psychological games (NFPGs).

Utilities are polynomials over the action-probability variables of all
players. Beliefs are identified with the strategy profile being evaluated, so
an NFPG "frozen" at a profile is an ordinary normal-form game.
"""
import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from psygames.exceptions import ProfileShapeMismatch
from psygames.services.expr import IDLE_ACTION, PolyExpr, ProbVar, eval_expr, parse_expr

logger = logging.getLogger(__name__)

# --- Tolerances ---
# Probabilities at or below this count as zero when classifying supports.
EPS_SUPP = 1e-8
# Allowed drift of a float distribution from summing to one.
EPS_PROB = 1e-9
# Default tolerance of the equilibrium check.
DEFAULT_VERIFY_TOL = 1e-6

JointAction = Tuple[str, ...]
Probability = Union[Fraction, float, int]


@dataclass(frozen=True)
class Nfpg:
    """
    A normal-form psychological game.

    ``utility[i][k]`` is player i's utility polynomial at the k-th joint action
    of ``joint_actions()`` (first player varies slowest).
    """
    players: Tuple[str, ...]
    actions: Tuple[Tuple[str, ...], ...]
    utility: Tuple[Tuple[PolyExpr, ...], ...]
    name: str = field(default='', compare=False)

    def __post_init__(self):
        if len(self.actions) != len(self.players) or len(self.utility) != len(self.players):
            raise ProfileShapeMismatch("Players, action sets and utility tables differ in length")
        seen = set()
        for i, acts in enumerate(self.actions):
            if not acts:
                raise ProfileShapeMismatch(f"Player '{self.players[i]}' has no actions")
            for a in acts:
                if not a:
                    raise ProfileShapeMismatch("Action names must be nonempty")
                if a != IDLE_ACTION and a in seen:
                    raise ProfileShapeMismatch(f"Action '{a}' is declared more than once")
                seen.add(a)
        size = 1
        for acts in self.actions:
            size *= len(acts)
        declared = set(self.prob_vars())
        for i, table in enumerate(self.utility):
            if len(table) != size:
                raise ProfileShapeMismatch(
                    f"Player '{self.players[i]}' has {len(table)} utility entries, expected {size}")
            for entry in table:
                stray = entry.variables() - declared
                if stray:
                    raise ProfileShapeMismatch(f"Utility entry refers to undeclared actions {sorted(map(str, stray))}")

    @classmethod
    def from_tables(cls, players: Sequence[str], actions: Sequence[Sequence[str]],
                    utility: Sequence[Mapping[JointAction, Union[PolyExpr, str, int, Fraction]]],
                    name: str = '') -> 'Nfpg':
        """
        Build a game from per-player tables keyed by joint action.

        Players with an empty action list receive the idle action. Entries may
        be PolyExpr values, numbers, or expression text; missing entries are 0.
        """
        acts = tuple(tuple(a) if a else (IDLE_ACTION,) for a in actions)
        vocab = [ProbVar(i, a) for i, al in enumerate(acts) for a in al]
        tables = []
        for table in utility:
            row = []
            for joint in itertools.product(*acts):
                value = table.get(joint, 0)
                if isinstance(value, str):
                    value = parse_expr(value, vocab)
                row.append(PolyExpr.coerce(value))
            tables.append(tuple(row))
        return cls(tuple(players), acts, tuple(tables), name=name)

    @property
    def n_players(self) -> int:
        return len(self.players)

    def joint_actions(self) -> List[JointAction]:
        return list(itertools.product(*self.actions))

    def joint_index(self, joint: JointAction) -> int:
        index = 0
        for acts, a in zip(self.actions, joint):
            index = index * len(acts) + acts.index(a)
        return index

    def entry(self, player: int, joint: JointAction) -> PolyExpr:
        return self.utility[player][self.joint_index(joint)]

    def prob_vars(self) -> List[ProbVar]:
        return [ProbVar(i, a) for i, acts in enumerate(self.actions) for a in acts]

    def is_classical(self) -> bool:
        """True when no utility entry depends on any probability."""
        return all(e.is_constant() for table in self.utility for e in table)


@dataclass(frozen=True)
class StrategyProfile:
    """Per-player mapping from action name to probability."""
    probs: Tuple[Mapping[str, Probability], ...]

    def __post_init__(self):
        for i, dist in enumerate(self.probs):
            if any(p < 0 for p in dist.values()):
                raise ProfileShapeMismatch(f"Negative probability for player {i}: {dict(dist)}")
            total = sum(dist.values())
            exact = all(isinstance(p, (int, Fraction)) for p in dist.values())
            if (exact and total != 1) or (not exact and abs(total - 1) > EPS_PROB):
                raise ProfileShapeMismatch(f"Probabilities of player {i} sum to {float(total)}, not 1")

    @classmethod
    def from_mapping(cls, game: Nfpg, probs: Mapping[str, Probability]) -> 'StrategyProfile':
        """
        Build a profile from a flat action->probability mapping.

        A player's last unmentioned action receives the remaining mass, so
        ``{'a2': Fraction(1, 3), 'a3': 0}`` is enough for a 2-action player.
        """
        dists = []
        for acts in game.actions:
            dist = {a: probs[a] for a in acts if a in probs}
            missing = [a for a in acts if a not in dist]
            if len(missing) == 1:
                rest = 1 - sum(dist.values(), Fraction(0))
                dist[missing[0]] = rest
            elif missing:
                raise ProfileShapeMismatch(f"Actions {missing} have no probability")
            dists.append({a: dist[a] for a in acts})
        return cls(tuple(dists))

    @classmethod
    def pure(cls, game: Nfpg, joint: JointAction) -> 'StrategyProfile':
        return cls(tuple({a: Fraction(int(a == chosen)) for a in acts} for acts, chosen in zip(game.actions, joint)))

    def prob(self, player: int, action: str) -> Probability:
        return self.probs[player][action]

    def check_shape(self, game: Nfpg) -> None:
        if len(self.probs) != game.n_players:
            raise ProfileShapeMismatch(f"Profile has {len(self.probs)} players, game has {game.n_players}")
        for i, (dist, acts) in enumerate(zip(self.probs, game.actions)):
            if set(dist) != set(acts):
                raise ProfileShapeMismatch(
                    f"Profile actions {sorted(dist)} for player '{game.players[i]}' do not match {list(acts)}")

    def assignment(self, game: Nfpg) -> Dict[ProbVar, Probability]:
        return {ProbVar(i, a): self.probs[i][a] for i, acts in enumerate(game.actions) for a in acts}

    def support(self, game: Nfpg, eps: float = EPS_SUPP) -> 'Support':
        return Support(tuple(tuple(a for a in acts if self.probs[i][a] > eps) for i, acts in enumerate(game.actions)))

    def as_floats(self) -> 'StrategyProfile':
        return StrategyProfile(tuple({a: float(p) for a, p in dist.items()} for dist in self.probs))


@dataclass(frozen=True)
class Support:
    """Per-player nonempty subset of actions, in declared order."""
    actions: Tuple[Tuple[str, ...], ...]

    def __post_init__(self):
        if any(not acts for acts in self.actions):
            raise ProfileShapeMismatch("Every player needs at least one supported action")

    def contains(self, player: int, action: str) -> bool:
        return action in self.actions[player]

    def label(self) -> str:
        return 'x'.join('{' + ','.join(acts) + '}' for acts in self.actions)

    def __str__(self):
        return self.label()


@dataclass(frozen=True)
class EquilibriumCandidate:
    """A verified psychological equilibrium together with its payoffs."""
    profile: StrategyProfile
    payoffs: Tuple[float, ...]
    welfare: float
    support: Support
    residual: float
    support_index: int = -1

    @classmethod
    def from_profile(cls, game: Nfpg, profile: StrategyProfile, residual: float,
                     support_index: int = -1) -> 'EquilibriumCandidate':
        payoffs = tuple(float(u) for u in expected_utility(game, profile, profile))
        return cls(profile, payoffs, float(sum(payoffs)), profile.support(game), float(residual), support_index)


NumericGame = Tuple[Dict[JointAction, Probability], ...]


def instantiate(game: Nfpg, profile: StrategyProfile) -> NumericGame:
    """
    Freeze beliefs at ``profile``: evaluate every utility entry there.

    Returns:
        NumericGame: per-player mapping joint action -> value (exact when the
        profile is rational).

    Raises:
        ProfileShapeMismatch: If the profile does not fit the game.
    """
    profile.check_shape(game)
    assignment = profile.assignment(game)
    joints = game.joint_actions()
    return tuple({joint: eval_expr(entry, assignment) for joint, entry in zip(joints, table)}
                 for table in game.utility)


def _outcome_weight(profile: StrategyProfile, joint: JointAction, skip: Optional[int] = None) -> Probability:
    weight = 1
    for j, a in enumerate(joint):
        if j != skip:
            weight = weight * profile.probs[j][a]
    return weight


def _frozen_utility(game: Nfpg, frozen: NumericGame, play: StrategyProfile) -> List[Probability]:
    totals = []
    for i in range(game.n_players):
        total = 0
        for joint, value in frozen[i].items():
            w = _outcome_weight(play, joint)
            if w:
                total = total + value * w
        totals.append(total)
    return totals


def expected_utility(game: Nfpg, belief_profile: StrategyProfile, play_profile: StrategyProfile) -> List[Probability]:
    """
    Expected utility of every player.

    Utility coefficients are frozen at ``belief_profile`` while the outcome
    distribution comes from ``play_profile``.
    """
    play_profile.check_shape(game)
    return _frozen_utility(game, instantiate(game, belief_profile), play_profile)


def deviation_payoffs(game: Nfpg, frozen: NumericGame, profile: StrategyProfile, player: int) -> Dict[str, Probability]:
    """Payoff of each pure action of ``player`` against the others' strategies in ``profile``."""
    payoffs = {a: 0 for a in game.actions[player]}
    for joint, value in frozen[player].items():
        w = _outcome_weight(profile, joint, skip=player)
        if w:
            payoffs[joint[player]] = payoffs[joint[player]] + value * w
    return payoffs


def verify_pe(game: Nfpg, profile: StrategyProfile, tol: float = DEFAULT_VERIFY_TOL) -> Tuple[bool, float]:
    """
    Check whether ``profile`` is a psychological equilibrium.

    Beliefs are frozen at the profile. A supported action must earn the
    profile payoff; an unsupported action must not earn more. Only pure
    deviations are checked, which is sufficient for the mixed case.

    Args:
        game (Nfpg): The game.
        profile (StrategyProfile): Candidate equilibrium strategies.
        tol (float): Largest accepted violation, must be positive.

    Returns:
        Tuple[bool, float]: Whether the profile is an equilibrium, and the
        largest violation found.

    Raises:
        ProfileShapeMismatch: If the profile does not fit the game.
    """
    if tol <= 0:
        raise ValueError(f"Verification tolerance must be positive, got {tol}")
    frozen = instantiate(game, profile)
    current = _frozen_utility(game, frozen, profile)
    residual = 0.0
    for i, acts in enumerate(game.actions):
        deviations = deviation_payoffs(game, frozen, profile, i)
        for a in acts:
            gap = float(deviations[a] - current[i])
            if profile.probs[i][a] > EPS_SUPP:
                residual = max(residual, abs(gap))
            else:
                residual = max(residual, gap)
    return residual <= tol, residual


def enumerate_supports(game: Nfpg) -> Iterator[Support]:
    """
    Yield every support of the game in lexicographic order.

    The first player varies slowest; within a player, subsets are ordered by
    their bitmask over the declared actions.
    """
    per_player = []
    for acts in game.actions:
        subsets = []
        for mask in range(1, 2 ** len(acts)):
            subsets.append(tuple(a for k, a in enumerate(acts) if mask >> k & 1))
        per_player.append(subsets)
    for combo in itertools.product(*per_player):
        yield Support(tuple(combo))


def count_supports(game: Nfpg) -> int:
    total = 1
    for acts in game.actions:
        total *= 2 ** len(acts) - 1
    return total
