"""
Command-line interface.

Result data goes to stdout (or ``--output``); diagnostics go to stderr.
Exit codes: 0 on success, 1 on usage or model errors, 2 when no equilibrium
exists (or, for ``verify``, when the profile is not an equilibrium).
"""
import logging
import sys
import time
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

import click

from psygames import init_logging
from psygames.config import get_config
from psygames.exceptions import NoEquilibriumFound, PsyGamesError
from psygames.modelio.catalog import builtin_models, load_model
from psygames.modelio.parser import ModelAst, bind_constants, elaborate, print_model
from psygames.modelio.results import (
    STATUS_ERROR,
    STATUS_NO_EQUILIBRIUM,
    STATUS_OK,
    EquilibriumRow,
    ResultRecord,
    render_experiment,
    render_results,
)
from psygames.services.game_core import Nfpg, StrategyProfile, verify_pe
from psygames.services.nlp import SolverConfig, find_swpe
from psygames.services.pcsg import Pcsg, backward_induction, model_stats, run_experiments
from psygames.utils.helpers import (
    format_number,
    get_env_variable,
    parse_binding,
    parse_profile,
    parse_sweep,
    sweep_grid,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_EQUILIBRIUM = 2


class PsyGamesGroup(click.Group):
    """Click group that reports usage errors with exit code 1 instead of click's 2."""

    def main(self, *args, standalone_mode: bool = True, **kwargs):
        try:
            rv = super().main(*args, standalone_mode=False, **kwargs)
        except click.ClickException as e:
            e.show()
            rv = EXIT_ERROR
        except click.Abort:
            click.echo('Aborted!', err=True)
            rv = EXIT_ERROR
        if not standalone_mode:
            return rv
        sys.exit(rv or EXIT_OK)


# --- Option groups ---
def solver_options(f):
    """Flags overriding the configured solver settings."""
    options = [
        click.option('--seed', type=click.IntRange(min=0), default=None, help='Base random seed.'),
        click.option('--starts', type=click.IntRange(min=1), default=None, help='Multi-start points per support.'),
        click.option('--max-iters', type=click.IntRange(min=1), default=None, help='Gradient iterations per start.'),
        click.option('--feas-tol', type=float, default=None, help='Feasibility tolerance.'),
        click.option('--opt-tol', type=float, default=None, help='Optimality tolerance.'),
        click.option('--threads', type=click.IntRange(min=1), default=None,
                     help='Worker threads (default: PG_THREADS).'),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def model_options(f):
    f = click.option('-c', '--const', 'consts', multiple=True, metavar='NAME=VALUE',
                     help='Bind a model constant (repeatable).')(f)
    return click.argument('model')(f)


def output_options(default_format: str):
    def decorate(f):
        f = click.option('--format', 'fmt', type=click.Choice(['text', 'csv', 'json']), default=default_format,
                         show_default=True, help='Report format.')(f)
        return click.option('-o', '--output', type=click.Path(dir_okay=False, writable=True), default=None,
                            help='Write the report to a file instead of stdout.')(f)
    return decorate


# --- Helpers ---
def _solver_config(ctx: click.Context, seed, starts, max_iters, feas_tol, opt_tol, threads) -> SolverConfig:
    try:
        return SolverConfig.from_config(ctx.obj, seed=seed, starts=starts, max_iters=max_iters, feas_tol=feas_tol,
                                        opt_tol=opt_tol, threads=threads)
    except ValueError as e:
        raise click.UsageError(str(e))


def _bindings(consts: Sequence[str]) -> Dict[str, Fraction]:
    bindings = {}
    for text in consts:
        try:
            name, value = parse_binding(text)
        except ValueError as e:
            raise click.BadParameter(str(e), param_hint="'-c'")
        bindings[name] = value
    return bindings


def _params(ast: ModelAst, bindings: Dict[str, Fraction]) -> Dict[str, float]:
    return {name: float(value) for name, value in bind_constants(ast, bindings).items()}


def _emit(text: str, output: Optional[str]) -> None:
    if output is None:
        click.echo(text, nl=False)
        return
    try:
        with open(output, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
    except OSError as e:
        raise click.FileError(output, hint=str(e))
    logger.info(f"Report written to {output}")


def _fail(message: str, code: int) -> None:
    click.echo(f"Error: {message}", err=True)
    click.get_current_context().exit(code)


def _params_text(params: Dict[str, float]) -> str:
    return ', '.join(f"{n}={format_number(v)}" for n, v in params.items())


def _record_text(record: ResultRecord) -> List[str]:
    lines = [f"model: {record.model}" + (f" ({_params_text(record.params)})" if record.params else '')]
    if record.status and record.status != STATUS_OK:
        lines.append(f"  status: {record.status}")
    for index, eq in enumerate(record.equilibria):
        lines.append(f"equilibrium {index}: support {eq.support}  welfare {format_number(eq.welfare)}  "
                     f"residual {format_number(eq.residual)}")
        for player, dist in eq.probabilities.items():
            strategy = ' '.join(f"{a}={format_number(p)}" for a, p in dist.items())
            lines.append(f"  {player}: {strategy}  utility {format_number(eq.utilities[player])}")
    return lines


def _report(records: Sequence[ResultRecord], fmt: str, seed: int) -> str:
    if fmt != 'text':
        return render_results(records, fmt)
    lines = [f"# seed={seed}"]
    for record in records:
        lines.extend(_record_text(record))
    return '\n'.join(lines) + '\n'


def _solve_record(name: str, game: Nfpg, params: Dict[str, float], cfg: SolverConfig, every: bool) -> ResultRecord:
    best, candidates = find_swpe(game, cfg)
    chosen = candidates if every else [best]
    return ResultRecord(name, params, [EquilibriumRow.from_candidate(game.players, c) for c in chosen])


def _load(model: str, consts: Sequence[str]):
    name, ast = load_model(model)
    bindings = _bindings(consts)
    return name, ast, bindings


def _pcsg(name: str, ast: ModelAst, bindings: Dict[str, Fraction], k: int) -> Pcsg:
    if ast.kind != 'pcsg':
        raise click.UsageError(f"Model '{name}' is a normal-form game; use 'solve' instead")
    # A model horizon constant named k follows -k unless bound explicitly.
    if 'k' in ast.constant_names():
        bindings.setdefault('k', Fraction(k))
    return elaborate(ast, bindings, name=name)


# --- Commands ---
@click.group(cls=PsyGamesGroup)
@click.option('-v', '--verbose', is_flag=True, help='Log debug output to stderr.')
@click.version_option(package_name='psygames')
@click.pass_context
def cli(ctx, verbose):
    """Compute psychological equilibria of normal-form and stochastic games."""
    config_class = get_config(get_env_variable('PG_ENV'))
    init_logging(config_class, 'DEBUG' if verbose else None)
    ctx.obj = config_class


@cli.command('solve')
@model_options
@click.option('--all', 'every', is_flag=True, help='Report every equilibrium, not only the SW-optimal one.')
@solver_options
@output_options('text')
@click.pass_context
def cmd_solve(ctx, model, consts, every, seed, starts, max_iters, feas_tol, opt_tol, threads, output, fmt):
    """Find the social-welfare-optimal psychological equilibrium of MODEL."""
    cfg = _solver_config(ctx, seed, starts, max_iters, feas_tol, opt_tol, threads)
    try:
        name, ast, bindings = _load(model, consts)
        if ast.kind != 'nfpg':
            raise click.UsageError(f"Model '{name}' is a stochastic game; use 'csg' instead")
        game = elaborate(ast, bindings, name=name)
        record = _solve_record(name, game, _params(ast, bindings), cfg, every)
    except NoEquilibriumFound as e:
        _fail(str(e), EXIT_NO_EQUILIBRIUM)
    except PsyGamesError as e:
        _fail(str(e), EXIT_ERROR)
    _emit(_report([record], fmt, cfg.seed), output)


@cli.command('verify')
@model_options
@click.option('-p', '--profile', 'entries', multiple=True, required=True, metavar='[PLAYER.]ACTION=PROB',
              help='Probability of an action; the last action of a player may be omitted.')
@click.option('--tol', type=float, default=1e-6, show_default=True, help='Largest accepted violation.')
@click.pass_context
def cmd_verify(ctx, model, consts, entries, tol):
    """Check whether a strategy profile is a psychological equilibrium of MODEL."""
    if tol <= 0:
        raise click.BadParameter('must be positive', param_hint="'--tol'")
    try:
        probs = parse_profile(entries)
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="'--profile'")
    try:
        name, ast, bindings = _load(model, consts)
        game = elaborate(ast, bindings, name=name)
        if not isinstance(game, Nfpg):
            raise click.UsageError(f"Model '{name}' is a stochastic game; verify needs a normal-form game")
        unknown = sorted(set(probs) - {a for acts in game.actions for a in acts})
        if unknown:
            raise click.BadParameter(f"Unknown action '{unknown[0]}'", param_hint="'--profile'")
        profile = StrategyProfile.from_mapping(game, probs)
        ok, residual = verify_pe(game, profile, tol)
    except PsyGamesError as e:
        _fail(str(e), EXIT_ERROR)
    click.echo(f"equilibrium: {'yes' if ok else 'no'}")
    click.echo(f"residual: {format_number(residual)}")
    ctx.exit(EXIT_OK if ok else EXIT_NO_EQUILIBRIUM)


@cli.command('sweep')
@model_options
@click.option('--sweep', 'sweeps', multiple=True, required=True, metavar='NAME=LO:HI:STEP',
              help='Parameter grid axis (repeatable; Cartesian product).')
@click.option('--all', 'every', is_flag=True, help='Report every equilibrium at each point.')
@solver_options
@output_options('csv')
@click.pass_context
def cmd_sweep(ctx, model, consts, sweeps, every, seed, starts, max_iters, feas_tol, opt_tol, threads, output, fmt):
    """Solve MODEL at every point of a parameter grid."""
    cfg = _solver_config(ctx, seed, starts, max_iters, feas_tol, opt_tol, threads)
    try:
        grid = sweep_grid([parse_sweep(text) for text in sweeps])
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="'--sweep'")
    try:
        name, ast, base = _load(model, consts)
    except PsyGamesError as e:
        _fail(str(e), EXIT_ERROR)
    if ast.kind != 'nfpg':
        raise click.UsageError(f"Model '{name}' is a stochastic game; sweeps need a normal-form game")
    stray = sorted((set(base) | set(grid[0])) - set(ast.constant_names()))
    if stray:
        raise click.BadParameter(f"The model declares no constant '{stray[0]}'", param_hint="'--sweep'")

    records = []
    for point in grid:
        bindings = {**base, **point}
        params = {n: float(v) for n, v in bindings.items()}
        try:
            params = _params(ast, bindings)
            record = _solve_record(name, elaborate(ast, bindings, name=name), params, cfg, every)
            record.status = STATUS_OK
        except NoEquilibriumFound as e:
            logger.warning(f"{name} at {_params_text(params)}: {e}")
            record = ResultRecord(name, params, [], STATUS_NO_EQUILIBRIUM)
        except PsyGamesError as e:
            logger.error(f"{name} at {_params_text(params)}: {e}")
            record = ResultRecord(name, params, [], STATUS_ERROR)
        records.append(record)
    _emit(_report(records, fmt, cfg.seed), output)


@cli.command('csg')
@model_options
@click.option('-k', '--horizon', 'k', type=int, required=True, help='Number of steps (at least 1).')
@click.option('-r', '--runs', type=click.IntRange(min=1), default=None,
              help='Repeat with uniformly random equilibrium selection instead of SW-optimal.')
@solver_options
@output_options('text')
@click.pass_context
def cmd_csg(ctx, model, consts, k, runs, seed, starts, max_iters, feas_tol, opt_tol, threads, output, fmt):
    """Solve a stochastic game MODEL by backward induction over K steps."""
    if k < 1:
        raise click.BadParameter('must be at least 1', param_hint="'-k'")
    cfg = _solver_config(ctx, seed, starts, max_iters, feas_tol, opt_tol, threads)
    try:
        name, ast, bindings = _load(model, consts)
        g = _pcsg(name, ast, bindings, k)
        params = _params(ast, bindings)
        if runs is not None:
            report = run_experiments(g, k, runs, cfg, seed=cfg.seed)
        else:
            table = backward_induction(g, k, cfg)
    except NoEquilibriumFound as e:
        _fail(str(e), EXIT_NO_EQUILIBRIUM)
    except PsyGamesError as e:
        _fail(str(e), EXIT_ERROR)

    if runs is not None:
        if fmt != 'text':
            _emit(render_experiment(name, params, report, fmt), output)
            return
        lines = [f"# seed={cfg.seed}", f"model: {name} ({_params_text(params)})", f"runs: {runs}  horizon: {k}"]
        for player, mean, std in zip(report.players, report.utility_mean, report.utility_std):
            lines.append(f"utility {player}: mean {format_number(mean)}  std {format_number(std)}")
        for action, mean in report.action_mean.items():
            lines.append(f"action {action}: mean {format_number(mean)}  std {format_number(report.action_std[action])}")
        for label, probs in report.class_mean.items():
            spread = report.class_std[label]
            lines.append(f"{label}: " + '  '.join(f"{a} {format_number(p)} (std {format_number(spread[a])})"
                                                  for a, p in probs.items()))
        _emit('\n'.join(lines) + '\n', output)
        return

    records = []
    for t in range(k, 0, -1):
        for s in table.layers[k - t]:
            stage = {**params, 't': float(t), **{v: float(x) for v, x in zip(g.variables, s)}}
            row = EquilibriumRow.from_candidate(g.players, table.strategies[(t, s)])
            records.append(ResultRecord(name, stage, [row]))
    if fmt != 'text':
        _emit(render_results(records, fmt), output)
        return
    lines = [f"# seed={cfg.seed}", f"model: {name} ({_params_text(params)})", f"horizon: {k}"]
    value = ' '.join(f"{p}={format_number(u)}" for p, u in zip(g.players, table.game_value))
    lines.append(f"value at {g.describe(g.initial)}: {value}")
    for record in records:
        eq = record.equilibria[0]
        where = f"t={format_number(record.params['t'])} " + ','.join(
            f"{v}={format_number(record.params[v])}" for v in g.variables)
        strategy = '  '.join(f"{p}: " + ' '.join(f"{a}={format_number(x)}" for a, x in dist.items())
                             for p, dist in eq.probabilities.items())
        lines.append(f"{where}  {strategy}")
    _emit('\n'.join(lines) + '\n', output)


@cli.command('stats')
@model_options
@click.option('-k', '--horizon', 'k', type=int, required=True, help='Number of steps (at least 1).')
@click.option('--solve/--no-solve', default=True, show_default=True, help='Also time backward induction.')
@solver_options
@click.pass_context
def cmd_stats(ctx, model, consts, k, solve, seed, starts, max_iters, feas_tol, opt_tol, threads):
    """Print state and transition counts of a stochastic game MODEL over K steps."""
    if k < 1:
        raise click.BadParameter('must be at least 1', param_hint="'-k'")
    cfg = _solver_config(ctx, seed, starts, max_iters, feas_tol, opt_tol, threads)
    try:
        name, ast, bindings = _load(model, consts)
        g = _pcsg(name, ast, bindings, k)
        states, transitions = model_stats(g, k)
        elapsed = None
        if solve:
            started = time.perf_counter()
            backward_induction(g, k, cfg)
            elapsed = time.perf_counter() - started
    except NoEquilibriumFound as e:
        _fail(str(e), EXIT_NO_EQUILIBRIUM)
    except PsyGamesError as e:
        _fail(str(e), EXIT_ERROR)
    click.echo(f"model: {name} ({_params_text(_params(ast, bindings))})")
    click.echo(f"horizon: {k}")
    click.echo(f"states: {states}")
    click.echo(f"transitions: {transitions}")
    if elapsed is not None:
        click.echo(f"time: {elapsed:.3f}s")


@cli.command('list-models')
def cmd_list_models():
    """List the bundled models and their parameters."""
    for name, entry in builtin_models().items():
        click.echo(f"{name} [{entry.kind}]  {entry.description}")
        for parameter in entry.parameters:
            click.echo(f"    {parameter.describe()}")


@cli.command('show')
@click.argument('model')
def cmd_show(model):
    """Print the canonical source of MODEL."""
    try:
        _, ast = load_model(model)
    except PsyGamesError as e:
        _fail(str(e), EXIT_ERROR)
    click.echo(print_model(ast), nl=False)
