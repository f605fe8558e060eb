"""
Bundled case-study models.

Every model ships twice: as ``.pg`` source under ``models/`` and as a Python
constructor building the same game directly. The two routes must agree.
"""
import logging
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Mapping, Optional, Tuple, Union

from psygames.config import Config
from psygames.exceptions import UnknownModel
from psygames.modelio.parser import ModelAst, Number, as_rational, elaborate, parse_model
from psygames.services.expr import IDLE_ACTION, PolyExpr, ProbVar
from psygames.services.game_core import Nfpg
from psygames.services.pcsg import Pcsg

logger = logging.getLogger(__name__)

HALF = Fraction(1, 2)
COUNTER_MAX = 10


def _var(player: int, action: str) -> PolyExpr:
    return PolyExpr.var(ProbVar(player, action))


# --- Normal-form models ---
def confidence() -> Nfpg:
    """Three players; p1 only watches whether p2 and p3 act."""
    a2, a3 = _var(1, 'a2'), _var(2, 'a3')
    u1 = {
        (IDLE_ACTION, 'a2', 'a3'): 1 + a2 + a3,
        (IDLE_ACTION, 'a2', 'r3'): HALF - Fraction(3, 2) * (a2 + a3),
        (IDLE_ACTION, 'r2', 'a3'): HALF - Fraction(3, 2) * (a2 + a3),
        (IDLE_ACTION, 'r2', 'r3'): -4 * (a2 + a3),
    }
    u2, u3 = {}, {}
    for x in ('a3', 'r3'):
        u2[(IDLE_ACTION, 'a2', x)] = Fraction(3, 2) * (a2 + a3)
        u2[(IDLE_ACTION, 'r2', x)] = HALF
    for x in ('a2', 'r2'):
        u3[(IDLE_ACTION, x, 'r3')] = HALF
    return Nfpg.from_tables(['p1', 'p2', 'p3'], [(), ('a2', 'r2'), ('a3', 'r3')], [u1, u2, u3], name='confidence')


def example2() -> Nfpg:
    """p1's payoff p(a2)*(40/9 - 400/81*p(a2)) peaks at p(a2) = 0.45."""
    a2 = _var(1, 'a2')
    u1 = {(IDLE_ACTION, 'a2'): Fraction(40, 9) - Fraction(400, 81) * a2}
    return Nfpg.from_tables(['p1', 'p2'], [(), ('a2', 'b2')], [u1, {}], name='example2')


def _offer_game(name: str, material: Mapping[Tuple[str, str], Tuple[int, int]], kindness: PolyExpr,
                weight: Fraction, theta1: Fraction, theta2: Fraction) -> Nfpg:
    # Sign of the reciprocity term in each outcome.
    signs = {('fair', 'reject'): -1, ('fair', 'accept'): 1, ('greedy', 'reject'): 1, ('greedy', 'accept'): -1}
    u1, u2 = {}, {}
    for joint, sign in signs.items():
        m1, m2 = material[joint]
        u1[joint] = m1 + sign * weight * theta1 * kindness
        u2[joint] = m2 + sign * weight * theta2 * kindness
    return Nfpg.from_tables(['p1', 'p2'], [('fair', 'greedy'), ('reject', 'accept')], [u1, u2], name=name)


def reciprocity(theta1: Number = 1, theta2: Number = 1) -> Nfpg:
    """Offer game with reciprocity sensitivities ``theta1``, ``theta2`` in [0, 1]."""
    reject = _var(1, 'reject')
    material = {('fair', 'reject'): (5, 5), ('fair', 'accept'): (5, 5),
                ('greedy', 'reject'): (1, 9), ('greedy', 'accept'): (9, 1)}
    return _offer_game('reciprocity', material, 2 - 4 * reject, Fraction(4),
                       as_rational(theta1), as_rational(theta2))


def ultimatum(theta1: Number = 1, theta2: Number = 1) -> Nfpg:
    """Ultimatum game with reciprocity sensitivities ``theta1``, ``theta2`` in [0, 1]."""
    reject = _var(1, 'reject')
    material = {('fair', 'reject'): (5, 5), ('fair', 'accept'): (5, 5),
                ('greedy', 'reject'): (0, 0), ('greedy', 'accept'): (9, 1)}
    return _offer_game('ultimatum', material, 2 + HALF * reject, Fraction(9, 2),
                       as_rational(theta1), as_rational(theta2))


def crossing(mu: Number = 2) -> Nfpg:
    """One-shot pedestrian crossing; ``mu`` in [0, 5] weighs the pedestrian's crossing penalty."""
    mu = as_rational(mu)
    r, m, w, c = _var(0, 'r'), _var(0, 'm'), _var(1, 'w'), _var(1, 'c')
    vehicle = {('r', 'w'): 1 - w, ('r', 'c'): 1 + c, ('m', 'w'): 1 + w, ('m', 'c'): 1 - c}
    pedestrian = {('r', 'w'): 1 - r, ('r', 'c'): 1 + r - mu * c,
                  ('m', 'w'): 1 + m, ('m', 'c'): 1 - m - mu * c}
    return Nfpg.from_tables(['vehicle', 'pedestrian'], [('r', 'm'), ('w', 'c')], [vehicle, pedestrian],
                            name='crossing')


# Per cyclist move: (a,g), (a,s), (h,g), (h,s). The vehicle's (a,w,s) entry is 15, as in the extensive-form game.
CYCLIST_PAYOFFS = {'y': (5, 3, 8, 6), 'w': (-400, 15, -400, 15), 'c': (-500, 20, -500, 20)}
VEHICLE_PAYOFFS = {'y': (7, 10, 15, 1), 'w': (-500, 15, -400, 7), 'c': (-300, 15, -200, 7)}


def cyclist_vehicle() -> Nfpg:
    """Nature (indifferent), cyclist and vehicle; cyclist payoffs are belief-weighted."""
    belief = {'a': _var(0, 'a'), 'h': _var(0, 'h')}
    cyclist, vehicle = {}, {}
    for move in ('y', 'w', 'c'):
        values = dict(zip((('a', 'g'), ('a', 's'), ('h', 'g'), ('h', 's')),
                          zip(CYCLIST_PAYOFFS[move], VEHICLE_PAYOFFS[move])))
        for (kind, drive), (u_c, u_v) in values.items():
            cyclist[(kind, move, drive)] = u_c * belief[kind]
            vehicle[(kind, move, drive)] = PolyExpr.const(u_v)
    return Nfpg.from_tables(['nature', 'cyclist', 'vehicle'], [('a', 'h'), ('y', 'w', 'c'), ('g', 's')],
                            [{}, cyclist, vehicle], name='cyclist_vehicle')


def cyclist_bimatrix(p: Number = Fraction(9, 10)) -> Nfpg:
    """Classical two-player game with nature folded in; ``p`` in [0, 1] is the share of autonomous vehicles."""
    p = as_rational(p)
    cyclist = {('y', 'g'): 8 - 3 * p, ('y', 's'): 6 - 3 * p, ('w', 'g'): -400, ('w', 's'): 15,
               ('c', 'g'): -500, ('c', 's'): 20}
    vehicle = {('y', 'g'): 15 - 8 * p, ('y', 's'): 1 + 9 * p, ('w', 'g'): -400 - 100 * p,
               ('w', 's'): 7 + 14 * p, ('c', 'g'): -200 - 100 * p, ('c', 's'): 7 + 8 * p}
    return Nfpg.from_tables(['cyclist', 'vehicle'], [('y', 'w', 'c'), ('g', 's')], [cyclist, vehicle],
                            name='cyclist_bimatrix')


# --- Multi-stage crossing ---
def _step(value: int, up: bool) -> int:
    return min(value + 1, COUNTER_MAX) if up else max(value - 1, 0)


def crossing_multi(mu: Number = 1, gamma: Number = HALF, k: Number = 5) -> Pcsg:
    """
    Repeated crossing over states (j, cr, cw) with attention coefficient ``gamma``.

    While j < k both players move and j advances. With probability ``gamma``
    the counter cr registers the vehicle's action (+1 on reduce, -1 on
    maintain, saturating in [0, 10]), otherwise it resets to 0; cw does the
    same for wait/cross. States with j = k are absorbing and reward nothing.
    """
    mu, gamma = as_rational(mu), as_rational(gamma)
    horizon = int(as_rational(k))

    def actions(s):
        return (('r', 'm'), ('w', 'c')) if s[0] < horizon else ((), ())

    def transition(s, joint):
        j, cr, cw = s
        if j >= horizon:
            return {tuple(s): Fraction(1)}
        dist: Dict[Tuple[int, int, int], Fraction] = {}
        for keep_r, p_r in ((True, gamma), (False, 1 - gamma)):
            for keep_w, p_w in ((True, gamma), (False, 1 - gamma)):
                target = (j + 1, _step(cr, joint[0] == 'r') if keep_r else 0,
                          _step(cw, joint[1] == 'w') if keep_w else 0)
                dist[target] = dist.get(target, Fraction(0)) + p_r * p_w
        return dist

    def action_reward(i, s, joint, vocab):
        if IDLE_ACTION in joint:
            return PolyExpr.const(0)
        names = {v.action: PolyExpr.var(v) for v in vocab}
        _, cr, cw = s
        if i == 0:
            w, c, lean = names['w'], names['c'], Fraction(cw, 10)
            table = {('r', 'w'): 1 - HALF * (w + lean), ('r', 'c'): Fraction(3, 2) + HALF * (c - lean),
                     ('m', 'w'): 1 + HALF * (w + lean), ('m', 'c'): HALF - HALF * (c - lean)}
        else:
            r, m, c, lean = names['r'], names['m'], names['c'], Fraction(cr, 10)
            table = {('r', 'w'): 1 - HALF * (r + lean), ('r', 'c'): 1 + HALF * (r + lean) - mu * c,
                     ('m', 'w'): Fraction(3, 2) + HALF * (m - lean),
                     ('m', 'c'): HALF - HALF * (m - lean) - mu * c}
        return table[tuple(joint)]

    return Pcsg(
        name='crossing_multi',
        players=('vehicle', 'pedestrian'),
        variables=('j', 'cr', 'cw'),
        initial=(0, 0, 0),
        actions_fn=actions,
        transition_fn=transition,
        action_reward_fn=action_reward,
        state_reward_fn=lambda i, s: Fraction(0),
    )


# --- Catalog ---
@dataclass(frozen=True)
class Parameter:
    """A model constant with its default and documented range."""
    name: str
    default: Fraction
    low: Fraction
    high: Fraction

    def describe(self) -> str:
        return f"{self.name}={self.default} in [{self.low}, {self.high}]"


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    kind: str
    description: str
    constructor: Callable[..., Union[Nfpg, Pcsg]]
    parameters: Tuple[Parameter, ...] = ()

    @property
    def path(self) -> str:
        return os.path.join(Config.PG_MODELS_DIR, f"{self.name}.pg")

    def source(self) -> str:
        with open(self.path, encoding='utf-8') as f:
            return f.read()

    def ast(self) -> ModelAst:
        return parse_model(self.source())

    def build(self, bindings: Optional[Mapping[str, Number]] = None) -> Union[Nfpg, Pcsg]:
        """Elaborate the bundled source."""
        return elaborate(self.ast(), bindings, name=self.name)

    def construct(self, **params) -> Union[Nfpg, Pcsg]:
        """Build the game through its Python constructor."""
        return self.constructor(**params)


def _param(name: str, default, low, high) -> Parameter:
    return Parameter(name, Fraction(default), Fraction(low), Fraction(high))


_THETAS = (_param('theta1', 1, 0, 1), _param('theta2', 1, 0, 1))

_CATALOG = (
    CatalogEntry('confidence', 'nfpg', 'Three-player confidence game', confidence),
    CatalogEntry('example2', 'nfpg', 'Passive player preferring a 0.45 mix', example2),
    CatalogEntry('reciprocity', 'nfpg', 'Offer game with reciprocity', reciprocity, _THETAS),
    CatalogEntry('ultimatum', 'nfpg', 'Ultimatum game with reciprocity', ultimatum, _THETAS),
    CatalogEntry('crossing', 'nfpg', 'One-shot pedestrian crossing', crossing, (_param('mu', 2, 0, 5),)),
    CatalogEntry('cyclist_vehicle', 'nfpg', 'Cyclist vs. vehicle with indifferent nature', cyclist_vehicle),
    CatalogEntry('cyclist_bimatrix', 'nfpg', 'Cyclist vs. vehicle with nature folded in', cyclist_bimatrix,
                 (_param('p', Fraction(9, 10), 0, 1),)),
    CatalogEntry('crossing_multi', 'pcsg', 'Multi-stage crossing with attention to past actions', crossing_multi,
                 (_param('mu', 1, 0, 5), _param('gamma', HALF, 0, 1), _param('k', 5, 1, 10))),
)


def builtin_models() -> Dict[str, CatalogEntry]:
    """The bundled models by name, in catalog order."""
    return {entry.name: entry for entry in _CATALOG}


def load_model(source: str) -> Tuple[str, ModelAst]:
    """
    Resolve a bundled model name or a ``.pg`` file path.

    Returns:
        Tuple[str, ModelAst]: Model id and parsed source.

    Raises:
        UnknownModel: If ``source`` is neither bundled nor an existing file.
    """
    catalog = builtin_models()
    if source in catalog:
        return source, catalog[source].ast()
    if os.path.isfile(source):
        with open(source, encoding='utf-8') as f:
            text = f.read()
        name = os.path.splitext(os.path.basename(source))[0]
        logger.debug(f"Loaded model '{name}' from {source}")
        return name, parse_model(text)
    raise UnknownModel(source)
