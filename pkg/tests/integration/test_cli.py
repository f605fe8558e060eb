import csv
import io
import json
import re

import pytest

from psygames import cli as cli_module
from psygames.cli import cli
from psygames.exceptions import NoEquilibriumFound
from psygames.modelio.catalog import builtin_models
from psygames.modelio.parser import parse_model
from psygames.modelio.results import read_results


def _rows(output: str, model: str):
    """Parse the CSV lines of ``output`` belonging to ``model``."""
    lines = output.splitlines()
    header = next(line for line in lines if line.startswith('model,'))
    body = [line for line in lines if line.startswith(f"{model},")]
    return list(csv.DictReader(io.StringIO('\n'.join([header] + body))))


def _no_equilibrium(game, cfg):
    raise NoEquilibriumFound(f"No equilibrium of '{game.name}'", inconclusive=1)


class TestSolveCommand:
    """
    The solve command on normal-form models.
    """

    def test_confidence_all(self, runner):
        """
        Test that --all reports the three confidence-game equilibria.
        """
        result = runner.invoke(cli, ['solve', 'confidence', '--all', '--format', 'csv'])

        assert result.exit_code == 0, result.output
        rows = _rows(result.output, 'confidence')
        assert {row['eq_index'] for row in rows} == {'0', '1', '2'}
        # Five probabilities and three utilities per equilibrium.
        assert len(rows) == 24

    def test_best_equilibrium_text(self, runner):
        """
        Test the text report of the SW-optimal crossing equilibrium at mu=2.
        """
        result = runner.invoke(cli, ['solve', 'crossing'])

        assert result.exit_code == 0, result.output
        lines = result.output.splitlines()
        assert lines[0] == '# seed=0'
        assert lines[1] == 'model: crossing (mu=2)'
        welfare = float(re.search(r'welfare (\S+)', result.output).group(1))
        assert welfare == pytest.approx(4.0, abs=1e-6)

    def test_constant_binding(self, runner):
        """
        Test that -c mu=5 leaves (m, w) as the only equilibrium.
        """
        result = runner.invoke(cli, ['solve', 'crossing', '-c', 'mu=5', '--all'])

        assert result.exit_code == 0, result.output
        assert 'model: crossing (mu=5)' in result.output
        assert result.output.count('equilibrium ') == 1
        assert 'support {m}x{w}' in result.output

    def test_seed_is_reported(self, runner):
        """
        Test that the seed used is the first line of text reports.
        """
        result = runner.invoke(cli, ['solve', 'example2', '--seed', '5'])

        assert result.exit_code == 0, result.output
        assert result.output.splitlines()[0] == '# seed=5'

    def test_json_output_file(self, runner, tmp_path):
        """
        Test that --output writes a report that reads back.
        """
        path = tmp_path / 'crossing.json'

        result = runner.invoke(cli, ['solve', 'crossing', '--format', 'json', '-o', str(path)])

        assert result.exit_code == 0, result.output
        (record,) = read_results(str(path), 'json')
        assert record.model == 'crossing'
        assert record.params == {'mu': 2.0}
        assert record.equilibria[0].welfare == pytest.approx(4.0, abs=1e-6)

    def test_model_from_file(self, runner, tmp_path):
        """
        Test solving a model given by path.
        """
        path = tmp_path / 'pd.pg'
        path.write_text('nfpg\nplayer row : c1, d1;\nplayer col : c2, d2;\n'
                        'rewards "row"\n  [c1, c2] : 3;\n  [d1, c2] : 5;\n  [d1, d2] : 1;\nendrewards\n'
                        'rewards "col"\n  [c1, c2] : 3;\n  [c1, d2] : 5;\n  [d1, d2] : 1;\nendrewards\n',
                        encoding='utf-8')

        result = runner.invoke(cli, ['solve', str(path)])

        assert result.exit_code == 0, result.output
        assert 'support {d1}x{d2}' in result.output

    @pytest.mark.parametrize('args', [
        ['solve', 'no_such_model'],
        ['solve', 'crossing', '-c', 'zeta=1'],
        ['solve', 'crossing', '-c', 'mu'],
        ['solve', 'crossing_multi'],
        ['solve', 'crossing', '--starts', '0'],
    ])
    def test_usage_and_model_errors(self, runner, args):
        """
        Test that unknown models, bad bindings, wrong model kinds and bad flags exit with 1.
        """
        result = runner.invoke(cli, args)

        assert result.exit_code == 1

    def test_no_equilibrium_exit_code(self, runner, monkeypatch):
        """
        Test that a solver failure exits with 2.
        """
        monkeypatch.setattr(cli_module, 'find_swpe', _no_equilibrium)

        result = runner.invoke(cli, ['solve', 'crossing'])

        assert result.exit_code == 2


class TestVerifyCommand:
    """
    The verify command.
    """

    def test_mixed_crossing_equilibrium(self, runner):
        """
        Test that r=3/4, c=1/2 verifies at mu=2.
        """
        result = runner.invoke(cli, ['verify', 'crossing', '-p', 'vehicle.r=3/4', '-p', 'pedestrian.c=1/2'])

        assert result.exit_code == 0
        assert result.output.splitlines() == ['equilibrium: yes', 'residual: 0']

    def test_not_an_equilibrium(self, runner):
        """
        Test that (m, c) fails with exit code 2 and the pedestrian's gain as residual.
        """
        result = runner.invoke(cli, ['verify', 'crossing', '-p', 'r=0', '-p', 'c=1'])

        assert result.exit_code == 2
        assert result.output.splitlines() == ['equilibrium: no', 'residual: 4']

    def test_cyclist_stop_equilibrium(self, runner):
        """
        Test the belief-dependent cyclist equilibrium given with exact fractions.
        """
        result = runner.invoke(cli, ['verify', 'cyclist_vehicle', '-p', 'a=14/17', '-p', 'y=1', '-p', 'w=0',
                                     '-p', 's=103552/107010'])

        assert result.exit_code == 0
        assert result.output.startswith('equilibrium: yes')

    @pytest.mark.parametrize('args', [
        ['verify', 'crossing', '-p', 'zz=1', '-p', 'c=1'],
        ['verify', 'crossing', '-p', 'r=1'],
        ['verify', 'crossing', '-p', 'r=1', '-p', 'c=1', '--tol', '0'],
        ['verify', 'crossing_multi', '-p', 'r=1', '-p', 'c=1'],
    ])
    def test_bad_profiles(self, runner, args):
        """
        Test that unknown actions, incomplete profiles, bad tolerances and
        stochastic models exit with 1.
        """
        result = runner.invoke(cli, args)

        assert result.exit_code == 1


class TestSweepCommand:
    """
    Parameter sweeps over normal-form models.
    """

    def test_ultimatum_grid(self, runner):
        """
        Test a 5x5 sweep of both reciprocity sensitivities.
        """
        result = runner.invoke(cli, ['sweep', 'ultimatum', '--sweep', 'theta1=0:1:0.25',
                                     '--sweep', 'theta2=0:1:0.25'])

        assert result.exit_code == 0, result.output
        rows = _rows(result.output, 'ultimatum')
        points = {(row['param:theta1'], row['param:theta2']) for row in rows}
        assert len(points) == 25
        assert ('0', '0') in points and ('1', '1') in points
        assert {row['status'] for row in rows} == {'ok'}
        corner = [row for row in rows if (row['param:theta1'], row['param:theta2']) == ('0', '0')]
        assert float(corner[0]['welfare']) == pytest.approx(10.0, abs=1e-6)

    def test_single_point(self, runner):
        """
        Test that lo == hi sweeps one point.
        """
        result = runner.invoke(cli, ['sweep', 'crossing', '--sweep', 'mu=2:2:1'])

        assert result.exit_code == 0, result.output
        assert {row['param:mu'] for row in _rows(result.output, 'crossing')} == {'2'}

    def test_failed_points_are_reported(self, runner, monkeypatch):
        """
        Test that points without an equilibrium get a status instead of aborting the sweep.
        """
        monkeypatch.setattr(cli_module, 'find_swpe', _no_equilibrium)

        result = runner.invoke(cli, ['sweep', 'crossing', '--sweep', 'mu=0:1:1'])

        assert result.exit_code == 0
        rows = _rows(result.output, 'crossing')
        assert [row['status'] for row in rows] == ['no_equilibrium', 'no_equilibrium']

    def test_output_is_deterministic(self, runner):
        """
        Test that the same seed reproduces byte-identical CSV.
        """
        args = ['sweep', 'crossing', '--sweep', 'mu=0:5:2.5', '--all', '--seed', '3']

        first = runner.invoke(cli, args)
        second = runner.invoke(cli, args)

        assert first.exit_code == 0, first.output
        assert first.output == second.output

    @pytest.mark.parametrize('sweep', ['zeta=0:1:0.5', 'mu=1:0:0.5', 'mu=0:1:0'])
    def test_bad_sweeps(self, runner, sweep):
        """
        Test that unknown constants and malformed grids exit with 1.
        """
        result = runner.invoke(cli, ['sweep', 'crossing', '--sweep', sweep])

        assert result.exit_code == 1


class TestCsgCommand:
    """
    Backward induction and experiments on stochastic models.
    """

    def test_value_at_initial_state(self, runner):
        """
        Test the text report of a short horizon without attention.
        """
        result = runner.invoke(cli, ['csg', 'crossing_multi', '-k', '2', '-c', 'gamma=0'])

        assert result.exit_code == 0, result.output
        assert 'horizon: 2' in result.output
        assert 'value at (j=0,cr=0,cw=0):' in result.output

    def test_stage_records(self, runner):
        """
        Test that CSV output holds one record per (steps remaining, state).
        """
        result = runner.invoke(cli, ['csg', 'crossing_multi', '-k', '2', '-c', 'gamma=0', '--format', 'csv'])

        assert result.exit_code == 0, result.output
        rows = _rows(result.output, 'crossing_multi')
        assert {(row['param:t'], row['param:j']) for row in rows} == {('2', '0'), ('1', '1')}
        assert {row['param:k'] for row in rows} == {'2'}

    def test_experiments(self, runner):
        """
        Test that --runs reports per-run, mean and std rows, with a per-step breakdown.
        """
        result = runner.invoke(cli, ['csg', 'crossing_multi', '-k', '2', '-c', 'gamma=0', '--runs', '2',
                                     '--format', 'csv'])

        assert result.exit_code == 0, result.output
        rows = _rows(result.output, 'crossing_multi')
        assert {row['run'] for row in rows} == {'0', '1', 'mean', 'std'}
        assert {row['quantity'] for row in rows} == {'utility', 'action', 'class_action'}
        classes = {row['name'] for row in rows if row['quantity'] == 'class_action' and row['run'] == 'mean'}
        assert classes == {f"step{d}:{a}" for d in (0, 1) for a in ('r', 'm', 'w', 'c')}

    @pytest.mark.parametrize('args', [
        ['csg', 'crossing_multi', '-k', '0'],
        ['csg', 'crossing', '-k', '2'],
        ['csg', 'crossing_multi', '-k', '2', '--runs', '0'],
    ])
    def test_errors(self, runner, args):
        """
        Test that a zero horizon, normal-form models and zero runs exit with 1.
        """
        result = runner.invoke(cli, args)

        assert result.exit_code == 1


class TestStatsCommand:
    """
    State-space statistics.
    """

    @pytest.mark.parametrize('k, gamma, states, transitions', [
        (5, '3/10', 91, 701),
        (5, '1', 91, 256),
        (5, '0', 6, 21),
    ])
    def test_counts(self, runner, k, gamma, states, transitions):
        """
        Test state and transition counts without solving.
        """
        result = runner.invoke(cli, ['stats', 'crossing_multi', '-k', str(k), '-c', f"gamma={gamma}", '--no-solve'])

        assert result.exit_code == 0, result.output
        assert f"states: {states}" in result.output
        assert f"transitions: {transitions}" in result.output
        assert 'time:' not in result.output

    def test_timed_solve(self, runner):
        """
        Test that solving reports a time.
        """
        result = runner.invoke(cli, ['stats', 'crossing_multi', '-k', '1'])

        assert result.exit_code == 0, result.output
        assert 'states: 5' in result.output
        assert 'time:' in result.output

    def test_normal_form_model(self, runner):
        """
        Test that stats on a normal-form model exits with 1.
        """
        result = runner.invoke(cli, ['stats', 'confidence', '-k', '1'])

        assert result.exit_code == 1


class TestCatalogCommands:
    """
    Listing and printing models.
    """

    def test_list_models(self, runner):
        """
        Test that every bundled model is listed with its parameters.
        """
        result = runner.invoke(cli, ['list-models'])

        assert result.exit_code == 0
        for name in builtin_models():
            assert name in result.output
        assert 'crossing_multi [pcsg]' in result.output
        assert 'gamma=1/2 in [0, 1]' in result.output

    def test_show_prints_canonical_source(self, runner):
        """
        Test that show prints source parsing to the bundled model.
        """
        result = runner.invoke(cli, ['show', 'ultimatum'])

        assert result.exit_code == 0
        assert parse_model(result.output) == builtin_models()['ultimatum'].ast()

    def test_show_unknown_model(self, runner):
        """
        Test that showing an unknown model exits with 1.
        """
        result = runner.invoke(cli, ['show', 'no_such_model'])

        assert result.exit_code == 1

    def test_stage_json(self, runner):
        """
        Test that JSON stage records carry the state variables as parameters.
        """
        result = runner.invoke(cli, ['csg', 'crossing_multi', '-k', '1', '-c', 'gamma=1', '--format', 'json'])

        assert result.exit_code == 0, result.output
        (record,) = json.loads(result.output)
        assert record['params']['t'] == 1.0
        assert record['params']['j'] == 0.0
