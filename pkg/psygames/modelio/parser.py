"""
Parser, printer and elaborator for the ``.pg`` modelling language.

A model starts with its kind (``nfpg`` or ``pcsg``) followed by constant,
player, variable, command and reward declarations. Inside reward expressions
an action name stands for the probability that its player picks it, so a
reward such as ``5 + theta1*(2 + reject/2)`` is a polynomial over the
declared actions. Expressions are kept as source text in the AST and are only
evaluated by ``elaborate``, once every constant has a value.
"""
import itertools
import logging
import operator
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from lark import Lark, Token, Tree
from lark.exceptions import UnexpectedCharacters, UnexpectedInput, UnexpectedToken

from psygames.exceptions import (
    DuplicateAction,
    DuplicateOrMissingPlayers,
    InvalidModel,
    ModelSyntaxError,
    NonPolynomial,
    NonPolynomialAfterSubstitution,
    RangeError,
    UnboundConstant,
    UnknownIdentifier,
    UnknownVariable,
)
from psygames.services.expr import IDLE_ACTION, PolyExpr, ProbVar, parse_expr
from psygames.services.game_core import Nfpg
from psygames.services.pcsg import Pcsg

logger = logging.getLogger(__name__)

MODEL_GRAMMAR = r"""
    start: kind item*

    kind: "nfpg"                -> nfpg
        | "pcsg"                -> pcsg

    ?item: const_decl
         | player_decl
         | var_decl
         | command
         | reward_block

    const_decl: "const" NAME ["=" expr] ";"
    player_decl: "player" NAME [":" name_list] ";"
    var_decl: NAME ":" "[" expr ".." expr "]" "init" expr ";"
    command: label [guard] "->" branches ";"
    reward_block: "rewards" ESCAPED_STRING reward_item* "endrewards"
    reward_item: [label] [guard] ":" expr ";"

    name_list: NAME ("," NAME)*
    label: "[" [name_list] "]"
    guard: "true"               -> always
         | expr
    branches: branch ("+" branch)*
    branch: [expr ":"] updates
    updates: update ("&" update)*
           | "true"             -> no_updates
    update: "(" NAME "'" "=" expr ")"

    ?expr: or_expr
    ?or_expr: and_expr
        | or_expr "|" and_expr  -> or_
    ?and_expr: not_expr
        | and_expr "&" not_expr -> and_
    ?not_expr: comparison
        | "!" not_expr          -> not_
    ?comparison: sum
        | sum "<" sum           -> lt
        | sum "<=" sum          -> le
        | sum ">" sum           -> gt
        | sum ">=" sum          -> ge
        | sum "=" sum           -> eq
        | sum "!=" sum          -> ne
    ?sum: product
        | sum "+" product       -> add
        | sum "-" product       -> sub
    ?product: unary
        | product "*" unary     -> mul
        | product "/" unary     -> div
    ?unary: power
        | "-" unary             -> neg
        | "+" unary
    ?power: atom
        | atom "^" unary        -> pow
    ?atom: NUMBER               -> number
        | NAME "(" [expr ("," expr)*] ")" -> call
        | NAME                  -> var
        | "(" expr ")"

    NUMBER: /\d+(\.\d+)?([eE][+-]?\d+)?/
    NAME: /[A-Za-z_][A-Za-z_0-9]*/
    COMMENT: /\/\/[^\n]*/

    %import common.ESCAPED_STRING
    %import common.WS
    %ignore WS
    %ignore COMMENT
"""

_parser = Lark(MODEL_GRAMMAR, parser='lalr', propagate_positions=True, start=['start', 'expr'])

# Rules that may appear inside a reward expression.
_ARITHMETIC = {'number', 'var', 'add', 'sub', 'mul', 'div', 'neg', 'pow'}
_FUNCTIONS = {'min': min, 'max': max}
_COMPARISONS = {
    'lt': operator.lt, 'le': operator.le, 'gt': operator.gt,
    'ge': operator.ge, 'eq': operator.eq, 'ne': operator.ne,
}

Number = Union[int, Fraction, float, str]


# --- Abstract syntax ---
@dataclass(frozen=True)
class PlayerDecl:
    name: str
    actions: Tuple[str, ...]


@dataclass(frozen=True)
class VarDecl:
    """Bounded integer state variable; bounds and initial value are expression text."""
    name: str
    low: str
    high: str
    init: str


@dataclass(frozen=True)
class Update:
    var: str
    expr: str


@dataclass(frozen=True)
class Branch:
    """One probabilistic outcome of a command; ``prob`` is None when omitted (probability one)."""
    prob: Optional[str]
    updates: Tuple[Update, ...]


@dataclass(frozen=True)
class Command:
    label: Tuple[str, ...]
    guard: str
    branches: Tuple[Branch, ...]


@dataclass(frozen=True)
class RewardItem:
    """
    Reward contribution of one block item.

    With a label the item is an action reward earned when every labelled
    action is played; without one it is a state reward.
    """
    label: Optional[Tuple[str, ...]]
    guard: str
    expr: str


@dataclass(frozen=True)
class RewardBlock:
    player: str
    items: Tuple[RewardItem, ...]


@dataclass(frozen=True)
class ModelAst:
    """Declarations of a model, with every expression kept as source text."""
    kind: str
    constants: Tuple[Tuple[str, Optional[str]], ...]
    players: Tuple[PlayerDecl, ...]
    variables: Tuple[VarDecl, ...] = ()
    commands: Tuple[Command, ...] = ()
    rewards: Tuple[RewardBlock, ...] = ()

    def constant_names(self) -> List[str]:
        return [name for name, _ in self.constants]

    def unbound_constants(self) -> List[str]:
        return [name for name, value in self.constants if value is None]

    def player_index(self) -> Dict[str, int]:
        return {p.name: i for i, p in enumerate(self.players)}

    def action_owner(self) -> Dict[str, int]:
        return {a: i for i, p in enumerate(self.players) for a in p.actions}


# --- Parsing ---
def _syntax_error(text: str, e: UnexpectedInput) -> ModelSyntaxError:
    line, col = getattr(e, 'line', -1), getattr(e, 'column', -1)
    if line is None or line < 0:
        line = text.count('\n') + 1
        col = len(text) - text.rfind('\n')
    if isinstance(e, UnexpectedToken):
        found = 'end of input' if e.token.type == '$END' else f"'{e.token}'"
        message = f"Unexpected {found}"
    elif isinstance(e, UnexpectedCharacters):
        message = f"Unexpected character '{e.char}'"
    else:
        message = "Unexpected end of input"
    return ModelSyntaxError(message, line, col)


def _identifiers(node, names=None, calls=None):
    """Collect variable names and called function names below ``node``."""
    names = set() if names is None else names
    calls = set() if calls is None else calls
    if isinstance(node, Token):
        if node.type == 'NAME':
            names.add(str(node))
    elif isinstance(node, Tree):
        kids = node.children
        if node.data == 'call':
            calls.add(str(kids[0]))
            kids = kids[1:]
        for kid in kids:
            if kid is not None:
                _identifiers(kid, names, calls)
    return names, calls


def _rules(node) -> set:
    if not isinstance(node, Tree):
        return set()
    found = {node.data}
    for kid in node.children:
        found |= _rules(kid)
    return found


class _AstBuilder:
    """Turns a lark parse tree into a ModelAst, checking identifiers on the way."""

    def __init__(self, text: str):
        self.text = text
        self.expr_nodes: List[Tuple[str, object]] = []

    def span(self, node) -> str:
        if isinstance(node, Token):
            return self.text[node.start_pos:node.end_pos]
        return self.text[node.meta.start_pos:node.meta.end_pos]

    def build(self, tree: Tree) -> ModelAst:
        kind = tree.children[0].data
        constants, players, variables, commands, rewards = [], [], [], [], []
        for item in tree.children[1:]:
            rule, kids = item.data, item.children
            if rule == 'const_decl':
                constants.append((str(kids[0]), None if kids[1] is None else self.span(kids[1])))
            elif rule == 'player_decl':
                actions = () if kids[1] is None else tuple(str(t) for t in kids[1].children)
                players.append(PlayerDecl(str(kids[0]), actions))
            elif rule == 'var_decl':
                self.expr_nodes.extend(('state', k) for k in kids[1:])
                variables.append(VarDecl(str(kids[0]), self.span(kids[1]), self.span(kids[2]), self.span(kids[3])))
            elif rule == 'command':
                commands.append(self.command(kids))
            else:
                player = str(kids[0])[1:-1]
                rewards.append(RewardBlock(player, tuple(self.reward_item(k.children) for k in kids[1:])))
        if kind == 'nfpg' and (variables or commands):
            raise InvalidModel("Normal-form models cannot declare state variables or commands")
        ast = ModelAst(kind, tuple(constants), tuple(players), tuple(variables), tuple(commands), tuple(rewards))
        _check_declarations(ast)
        self.check_names(ast)
        return ast

    @staticmethod
    def label(node) -> Tuple[str, ...]:
        names = node.children[0]
        return () if names is None else tuple(str(t) for t in names.children)

    def guard(self, node) -> str:
        if node is None or node.data == 'always':
            return 'true'
        self.expr_nodes.append(('state', node.children[0]))
        return self.span(node.children[0])

    def command(self, kids) -> Command:
        label, guard = self.label(kids[0]), self.guard(kids[1])
        branches = []
        for branch in kids[2].children:
            prob, body = branch.children
            if prob is not None:
                self.expr_nodes.append(('state', prob))
            updates = []
            if body.data == 'updates':
                for update in body.children:
                    self.expr_nodes.append(('state', update.children[1]))
                    updates.append(Update(str(update.children[0]), self.span(update.children[1])))
            branches.append(Branch(None if prob is None else self.span(prob), tuple(updates)))
        return Command(label, guard, tuple(branches))

    def reward_item(self, kids) -> RewardItem:
        label = None if kids[0] is None else self.label(kids[0])
        guard = self.guard(kids[1])
        self.expr_nodes.append(('reward', kids[2]))
        return RewardItem(label, guard, self.span(kids[2]))

    def check_names(self, ast: ModelAst) -> None:
        state_names = set(ast.constant_names()) | {v.name for v in ast.variables}
        reward_names = state_names | set(ast.action_owner())
        for scope, node in self.expr_nodes:
            names, calls = _identifiers(node)
            known = reward_names if scope == 'reward' else state_names
            unknown = sorted(names - known)
            if unknown:
                raise UnknownIdentifier(f"Unknown identifier '{unknown[0]}' in '{self.span(node)}'")
            if scope == 'reward':
                if calls or not _rules(node) <= _ARITHMETIC:
                    raise InvalidModel(f"Reward expression '{self.span(node)}' must be a polynomial")
            else:
                stray = sorted(calls - set(_FUNCTIONS))
                if stray:
                    raise UnknownIdentifier(f"Unknown function '{stray[0]}' in '{self.span(node)}'")


def _check_declarations(ast: ModelAst) -> None:
    if not ast.players:
        raise DuplicateOrMissingPlayers("A model must declare at least one player")
    names = [p.name for p in ast.players]
    repeated = sorted({n for n in names if names.count(n) > 1})
    if repeated:
        raise DuplicateOrMissingPlayers(f"Player '{repeated[0]}' is declared more than once")
    seen = set()
    for p in ast.players:
        for a in p.actions:
            if a == IDLE_ACTION:
                raise DuplicateAction(f"'{IDLE_ACTION}' is reserved for players without actions")
            if a in seen:
                raise DuplicateAction(f"Action '{a}' is declared more than once")
            seen.add(a)
    consts = ast.constant_names()
    if len(set(consts)) != len(consts):
        raise InvalidModel("A constant is declared more than once")
    var_names = [v.name for v in ast.variables]
    if len(set(var_names)) != len(var_names):
        raise InvalidModel("A state variable is declared more than once")
    for v in ast.variables:
        try:
            low, high = Fraction(v.low), Fraction(v.high)
        except ValueError:
            continue
        if low > high:
            raise RangeError(f"Variable '{v.name}' has the empty range [{v.low}..{v.high}]")

    owner = ast.action_owner()
    labels = [c.label for c in ast.commands]
    labels += [item.label for block in ast.rewards for item in block.items if item.label is not None]
    for label in labels:
        players = []
        for a in label:
            if a not in owner:
                raise UnknownIdentifier(f"Unknown action '{a}' in label [{','.join(label)}]")
            players.append(owner[a])
        if len(set(players)) != len(players):
            raise InvalidModel(f"Label [{','.join(label)}] names two actions of the same player")
    for c in ast.commands:
        for b in c.branches:
            for u in b.updates:
                if u.var not in var_names:
                    raise UnknownIdentifier(f"Update of undeclared variable '{u.var}'")
    for block in ast.rewards:
        if block.player not in names:
            raise UnknownIdentifier(f"Reward block for undeclared player '{block.player}'")


def parse_model(text: str) -> ModelAst:
    """
    Parse model source text.

    Args:
        text (str): Source in the ``.pg`` modelling language.

    Returns:
        ModelAst: All declarations, with expressions as source text.

    Raises:
        ModelSyntaxError: With line and column of the first offending token.
        UnknownIdentifier: If a name resolves to no constant, variable or action.
        DuplicateAction: If an action name is declared twice.
        DuplicateOrMissingPlayers: If no player, or a player twice, is declared.
        RangeError: If a variable range with literal bounds is empty.
    """
    try:
        tree = _parser.parse(text, start='start')
    except UnexpectedInput as e:
        raise _syntax_error(text, e) from None
    return _AstBuilder(text).build(tree)


# --- Printing ---
def _label_text(label: Sequence[str]) -> str:
    return '[' + ', '.join(label) + ']'


def _branch_text(branch: Branch) -> str:
    body = ' & '.join(f"({u.var}'={u.expr})" for u in branch.updates) or 'true'
    return body if branch.prob is None else f"{branch.prob} : {body}"


def print_model(ast: ModelAst) -> str:
    """Render an AST back to source text that parses to an equal AST."""
    lines = [ast.kind, '']
    if ast.constants:
        for name, value in ast.constants:
            lines.append(f"const {name};" if value is None else f"const {name} = {value};")
        lines.append('')
    for p in ast.players:
        lines.append(f"player {p.name} : {', '.join(p.actions)};" if p.actions else f"player {p.name};")
    lines.append('')
    if ast.variables:
        for v in ast.variables:
            lines.append(f"{v.name} : [{v.low}..{v.high}] init {v.init};")
        lines.append('')
    for c in ast.commands:
        branches = '\n    + '.join(_branch_text(b) for b in c.branches)
        lines.append(f"{_label_text(c.label)} {c.guard} -> {branches};")
    if ast.commands:
        lines.append('')
    for block in ast.rewards:
        lines.append(f'rewards "{block.player}"')
        for item in block.items:
            head = [] if item.label is None else [_label_text(item.label)]
            if item.guard != 'true' or item.label is None:
                head.append(item.guard)
            lines.append(f"    {' '.join(head)} : {item.expr};")
        lines.append('endrewards')
        lines.append('')
    return '\n'.join(lines).rstrip('\n') + '\n'


# --- Evaluation of guards, updates and constants ---
@lru_cache(maxsize=4096)
def _expr_tree(text: str):
    try:
        return _parser.parse(text, start='expr')
    except UnexpectedInput as e:
        raise _syntax_error(text, e) from None


def as_rational(value: Number) -> Fraction:
    if isinstance(value, (Fraction, int)):
        return Fraction(value)
    try:
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError):
        raise InvalidModel(f"'{value}' is not a rational number") from None


def _evaluate(node, env: Mapping[str, Fraction]):
    if isinstance(node, Token):
        if node.type == 'NUMBER':
            return Fraction(str(node))
        return env[str(node)]
    rule, kids = node.data, node.children
    if rule == 'number':
        return Fraction(str(kids[0]))
    if rule == 'var':
        name = str(kids[0])
        if name not in env:
            raise UnknownIdentifier(f"Unknown identifier '{name}'")
        return env[name]
    if rule in _COMPARISONS:
        return _COMPARISONS[rule](_evaluate(kids[0], env), _evaluate(kids[1], env))
    if rule == 'and_':
        return _truth(_evaluate(kids[0], env)) and _truth(_evaluate(kids[1], env))
    if rule == 'or_':
        return _truth(_evaluate(kids[0], env)) or _truth(_evaluate(kids[1], env))
    if rule == 'not_':
        return not _truth(_evaluate(kids[0], env))
    if rule == 'call':
        args = [_evaluate(k, env) for k in kids[1:] if k is not None]
        if not args:
            raise InvalidModel(f"'{kids[0]}' needs at least one argument")
        return _FUNCTIONS[str(kids[0])](args)
    a = _evaluate(kids[0], env)
    if rule == 'neg':
        return -a
    b = _evaluate(kids[1], env)
    if rule == 'add':
        return a + b
    if rule == 'sub':
        return a - b
    if rule == 'mul':
        return a * b
    if rule == 'div':
        if b == 0:
            raise InvalidModel("Division by zero")
        return a / b
    if rule == 'pow':
        if b.denominator != 1:
            raise InvalidModel(f"Exponent {b} is not an integer")
        return a ** int(b)
    raise InvalidModel(f"Unexpected expression node '{rule}'")


def _truth(value) -> bool:
    if not isinstance(value, bool):
        raise InvalidModel(f"Expected a condition, got the number {value}")
    return value


def evaluate_text(text: str, env: Mapping[str, Fraction]):
    """Evaluate guard, update or constant text exactly under ``env``."""
    if text == 'true':
        return True
    return _evaluate(_expr_tree(text), env)


def _integer(value, what: str) -> int:
    if isinstance(value, bool) or Fraction(value).denominator != 1:
        raise RangeError(f"{what} must be an integer, got {value}")
    return int(value)


def bind_constants(ast: ModelAst, bindings: Optional[Mapping[str, Number]] = None) -> Dict[str, Fraction]:
    """
    Give every constant a value: a binding overrides the declared value.

    Raises:
        UnboundConstant: If a constant has neither a declared value nor a binding.
        UnknownIdentifier: If a binding names no declared constant.
    """
    bindings = dict(bindings or {})
    declared = set(ast.constant_names())
    stray = sorted(set(bindings) - declared)
    if stray:
        raise UnknownIdentifier(f"The model declares no constant '{stray[0]}'")
    env: Dict[str, Fraction] = {}
    for name, text in ast.constants:
        if name in bindings:
            env[name] = as_rational(bindings[name])
        elif text is not None:
            value = evaluate_text(text, env)
            if isinstance(value, bool):
                raise InvalidModel(f"Constant '{name}' must be a number")
            env[name] = value
        else:
            raise UnboundConstant(name)
    return env


# --- Elaboration ---
def _label_map(label: Sequence[str], owner: Mapping[str, int]) -> Dict[int, str]:
    return {owner[a]: a for a in label}


def _matches(label: Mapping[int, str], joint: Sequence[str]) -> bool:
    return all(joint[i] == a for i, a in label.items())


def _reward(text: str, vocab: Sequence[ProbVar], env: Mapping[str, Fraction]) -> PolyExpr:
    try:
        return parse_expr(text, vocab, env)
    except NonPolynomial as e:
        raise NonPolynomialAfterSubstitution(f"Reward '{text}' is not a polynomial: {e}") from None


def _elaborate_nfpg(ast: ModelAst, env: Mapping[str, Fraction], name: str) -> Nfpg:
    owner = ast.action_owner()
    index = ast.player_index()
    acts = tuple(p.actions or (IDLE_ACTION,) for p in ast.players)
    vocab = [ProbVar(i, a) for i, al in enumerate(acts) for a in al]
    tables: List[Dict[Tuple[str, ...], PolyExpr]] = [{} for _ in ast.players]
    joints = list(itertools.product(*acts))
    for block in ast.rewards:
        i = index[block.player]
        for item in block.items:
            if not evaluate_text(item.guard, env):
                continue
            value = _reward(item.expr, vocab, env)
            label = _label_map(item.label or (), owner)
            for joint in joints:
                if _matches(label, joint):
                    tables[i][joint] = tables[i].get(joint, PolyExpr.const(0)) + value
    return Nfpg.from_tables([p.name for p in ast.players], acts, tables, name=name)


class GuardedModel:
    """
    State-space semantics of a ``pcsg`` model: guards, probabilistic updates
    and reward items evaluated against a state valuation.
    """

    def __init__(self, ast: ModelAst, env: Mapping[str, Fraction]):
        self.ast = ast
        self.env = dict(env)
        self.owner = ast.action_owner()
        self.variables = tuple(v.name for v in ast.variables)
        self.bounds = []
        initial = []
        for v in ast.variables:
            low = _integer(evaluate_text(v.low, env), f"Lower bound of '{v.name}'")
            high = _integer(evaluate_text(v.high, env), f"Upper bound of '{v.name}'")
            init = _integer(evaluate_text(v.init, env), f"Initial value of '{v.name}'")
            if low > high:
                raise RangeError(f"Variable '{v.name}' has the empty range [{low}..{high}]")
            if not low <= init <= high:
                raise RangeError(f"Initial value {init} of '{v.name}' lies outside [{low}..{high}]")
            self.bounds.append((low, high))
            initial.append(init)
        self.initial = tuple(initial)
        self.position = {name: k for k, name in enumerate(self.variables)}
        self.commands = [(_label_map(c.label, self.owner), c) for c in ast.commands]
        index = ast.player_index()
        self.rewards: List[List[Tuple[Optional[Dict[int, str]], RewardItem]]] = [[] for _ in ast.players]
        for block in ast.rewards:
            for item in block.items:
                label = None if item.label is None else _label_map(item.label, self.owner)
                self.rewards[index[block.player]].append((label, item))
        self.check_rewards()

    def check_rewards(self) -> None:
        """
        Reject rewards over actions that no command offers, and rewards of the
        initial state that mention actions unavailable there.
        """
        offered = {a for label, _ in self.commands for a in label.values()}
        shadowed = set(self.env) | set(self.variables)
        for player, items in zip(self.ast.players, self.rewards):
            for label, item in items:
                names, _ = _identifiers(_expr_tree(item.expr))
                beliefs = {n for n in names if n in self.owner and n not in shadowed}
                if label is None and beliefs:
                    raise InvalidModel(f"State reward '{item.expr}' depends on action probabilities")
                used = set((label or {}).values()) | beliefs
                missing = sorted(used - offered)
                if missing:
                    raise InvalidModel(f"Reward of '{player.name}' refers to action '{missing[0]}', "
                                       f"which no command offers")
        s = self.initial
        acts = tuple(a or (IDLE_ACTION,) for a in self.actions(s))
        vocab = [ProbVar(i, a) for i, al in enumerate(acts) for a in al]
        for joint in itertools.product(*acts):
            for i in range(len(self.ast.players)):
                try:
                    self.action_reward(i, s, joint, vocab)
                except UnknownVariable as e:
                    raise InvalidModel(f"Reward of '{self.ast.players[i].name}' in the initial state refers to "
                                       f"action '{e.name}', which is not available there") from None

    def state_env(self, s) -> Dict[str, Fraction]:
        env = dict(self.env)
        env.update({name: Fraction(v) for name, v in zip(self.variables, s)})
        return env

    def enabled(self, s) -> list:
        env = self.state_env(s)
        return [(label, c) for label, c in self.commands if evaluate_text(c.guard, env)]

    def actions(self, s) -> Tuple[Tuple[str, ...], ...]:
        used = {a for label, _ in self.enabled(s) for a in label.values()}
        return tuple(tuple(a for a in p.actions if a in used) for p in self.ast.players)

    def transition(self, s, joint) -> Dict[Tuple[int, ...], Fraction]:
        env = self.state_env(s)
        fired = [c for label, c in self.enabled(s) if _matches(label, joint)]
        if not fired:
            return {tuple(s): Fraction(1)}
        if len(fired) > 1:
            raise InvalidModel(f"Several commands fire in state {s} under {joint}")
        dist: Dict[Tuple[int, ...], Fraction] = {}
        for branch in fired[0].branches:
            p = Fraction(1) if branch.prob is None else evaluate_text(branch.prob, env)
            if isinstance(p, bool) or not 0 <= p <= 1:
                raise InvalidModel(f"Branch probability '{branch.prob}' evaluates to {p} in state {s}")
            target = list(s)
            for u in branch.updates:
                k = self.position[u.var]
                value = _integer(evaluate_text(u.expr, env), f"Update of '{u.var}'")
                low, high = self.bounds[k]
                if not low <= value <= high:
                    raise RangeError(f"Update sets '{u.var}' to {value}, outside [{low}..{high}]")
                target[k] = value
            key = tuple(target)
            dist[key] = dist.get(key, Fraction(0)) + p
        return dist

    def action_reward(self, player: int, s, joint, vocab: Sequence[ProbVar]) -> PolyExpr:
        env = self.state_env(s)
        total = PolyExpr.const(0)
        for label, item in self.rewards[player]:
            if label is not None and _matches(label, joint) and evaluate_text(item.guard, env):
                total = total + _reward(item.expr, vocab, env)
        return total

    def state_reward(self, player: int, s) -> Fraction:
        env = self.state_env(s)
        total = Fraction(0)
        for label, item in self.rewards[player]:
            if label is None and evaluate_text(item.guard, env):
                try:
                    total += _reward(item.expr, (), env).constant_term()
                except UnknownVariable:
                    raise InvalidModel(f"State reward '{item.expr}' depends on action probabilities") from None
        return total


def elaborate(ast: ModelAst, bindings: Optional[Mapping[str, Number]] = None, name: str = '') -> Union[Nfpg, Pcsg]:
    """
    Substitute constants and build the ground game.

    Args:
        ast (ModelAst): Parsed model.
        bindings (Optional[Mapping[str, Number]]): Constant overrides.
        name (str): Name given to the resulting game.

    Returns:
        Union[Nfpg, Pcsg]: An NFPG for ``nfpg`` models; a PCSG whose state
        space is explored lazily for ``pcsg`` models.

    Raises:
        UnboundConstant: If a constant is left without a value.
        NonPolynomialAfterSubstitution: If a reward is not polynomial in the actions.
        InvalidModel: If a ``pcsg`` reward refers to actions that no command
            offers, or that the initial state does not offer.
    """
    env = bind_constants(ast, bindings)
    logger.debug(f"Elaborating {ast.kind} model '{name}' with {dict((k, str(v)) for k, v in env.items())}")
    if ast.kind == 'nfpg':
        return _elaborate_nfpg(ast, env, name)
    model = GuardedModel(ast, env)
    return Pcsg(
        name=name,
        players=tuple(p.name for p in ast.players),
        variables=model.variables,
        initial=model.initial,
        actions_fn=model.actions,
        transition_fn=model.transition,
        action_reward_fn=model.action_reward,
        state_reward_fn=model.state_reward,
    )
