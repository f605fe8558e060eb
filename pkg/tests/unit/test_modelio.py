import io
import json
from fractions import Fraction

import pytest

from psygames.exceptions import (
    DuplicateAction,
    DuplicateOrMissingPlayers,
    InvalidModel,
    ModelSyntaxError,
    RangeError,
    ResultsIoError,
    UnboundConstant,
    UnknownIdentifier,
    UnknownModel,
)
from psygames.modelio import catalog
from psygames.modelio.catalog import builtin_models, load_model
from psygames.modelio.parser import bind_constants, elaborate, parse_model, print_model
from psygames.modelio.results import (
    EquilibriumRow,
    ResultRecord,
    read_results,
    render_experiment,
    render_results,
    write_results,
)
from psygames.services.expr import ProbVar
from psygames.services.game_core import EquilibriumCandidate, Nfpg, StrategyProfile
from psygames.services.pcsg import ExperimentReport, Pcsg, reachable_layers

ULTIMATUM = """
// Ultimatum game
nfpg
const theta1 = 1;
const theta2 = 1;
player p1 : fair, greedy;
player p2 : reject, accept;
rewards "p1"
    [fair, reject] : 5 - 9/2*theta1*(2 + reject/2);
    [fair, accept] : 5 + 9/2*theta1*(2 + reject/2);
    [greedy, accept] : 9 - 9/2*theta1*(2 + reject/2);
    [greedy, reject] : 9/2*theta1*(2 + reject/2);
endrewards
rewards "p2"
    [fair, reject] : 5 - 9/2*theta2*(2 + reject/2);
    [fair, accept] : 5 + 9/2*theta2*(2 + reject/2);
    [greedy, accept] : 1 - 9/2*theta2*(2 + reject/2);
    [greedy, reject] : 9/2*theta2*(2 + reject/2);
endrewards
"""

COUNTER = """
pcsg
const gamma;
player ped : w, c;
player car : r, m;
cr : [0..10] init 0;
[w, r] true -> gamma*gamma : (cr'=min(cr+1,10))
    + gamma*(1-gamma) : (cr'=0)
    + (1-gamma)*gamma : (cr'=min(cr+1,10))
    + (1-gamma)*(1-gamma) : (cr'=0);
"""


def _same_nfpg(left: Nfpg, right: Nfpg) -> bool:
    return left.players == right.players and left.actions == right.actions and left.utility == right.utility


def _same_pcsg(left: Pcsg, right: Pcsg, k: int) -> bool:
    layers_left, layers_right = reachable_layers(left, k), reachable_layers(right, k)
    if layers_left != layers_right:
        return False
    for layer in layers_left:
        for s in layer:
            if left.avail(s) != right.avail(s):
                return False
            for joint in left.joint_actions(s):
                if left.transition(s, joint) != right.transition(s, joint):
                    return False
                for i in range(left.n_players):
                    if left.action_reward(i, s, joint) != right.action_reward(i, s, joint):
                        return False
            if any(left.state_reward(i, s) != right.state_reward(i, s) for i in range(left.n_players)):
                return False
    return True


class TestParseModel:
    """
    Parsing model source into an AST.
    """

    def test_ultimatum_rewards(self):
        """
        Test that reward blocks keep their labels and expression text.
        """
        ast = parse_model(ULTIMATUM)

        assert ast.kind == 'nfpg'
        assert [b.player for b in ast.rewards] == ['p1', 'p2']
        assert ast.rewards[0].items[0].label == ('fair', 'reject')
        assert ast.rewards[0].items[0].expr == '5 - 9/2*theta1*(2 + reject/2)'
        assert ast.action_owner() == {'fair': 0, 'greedy': 0, 'reject': 1, 'accept': 1}

    def test_counter_command(self):
        """
        Test that a probabilistic command keeps its four branches and saturating updates.
        """
        ast = parse_model(COUNTER)

        command = ast.commands[0]
        assert command.label == ('w', 'r')
        assert len(command.branches) == 4
        assert command.branches[0].updates[0].expr == 'min(cr+1,10)'
        assert ast.unbound_constants() == ['gamma']

    def test_counter_successors(self):
        """
        Test the four (w, r) successors and their probabilities once gamma is bound.
        """
        g = elaborate(parse_model(COUNTER), {'gamma': Fraction(1, 4)})

        assert g.transition((3,), ('w', 'r')) == {(4,): Fraction(1, 4), (0,): Fraction(3, 4)}
        assert g.avail((3,)) == (('w',), ('r',))

    def test_no_players(self):
        """
        Test that a model without players is rejected.
        """
        with pytest.raises(DuplicateOrMissingPlayers):
            parse_model('nfpg\nconst x = 1;\n')

    def test_duplicate_action(self):
        """
        Test that two players may not share an action.
        """
        with pytest.raises(DuplicateAction):
            parse_model('nfpg\nplayer a : x, y;\nplayer b : x, z;\n')

    def test_unknown_identifier_in_reward(self):
        """
        Test that a reward naming neither a constant nor an action is rejected.
        """
        with pytest.raises(UnknownIdentifier):
            parse_model('nfpg\nplayer a : x, y;\nrewards "a"\n  [x] : 1 + zeta;\nendrewards\n')

    def test_functions_not_allowed_in_rewards(self):
        """
        Test that min/max are reserved for state updates.
        """
        with pytest.raises(InvalidModel):
            parse_model('nfpg\nplayer a : x, y;\nrewards "a"\n  [x] : min(x, y);\nendrewards\n')

    def test_empty_range(self):
        """
        Test that a literal range with low above high raises RangeError.
        """
        with pytest.raises(RangeError):
            parse_model('pcsg\nplayer a : x;\nv : [3..1] init 2;\n')

    def test_syntax_error_position(self):
        """
        Test that syntax errors carry line and column.
        """
        with pytest.raises(ModelSyntaxError) as excinfo:
            parse_model('nfpg\nplayer a : x y;\n')

        assert excinfo.value.line == 2
        assert excinfo.value.col > 0

    def test_label_with_two_actions_of_one_player(self):
        """
        Test that a label naming two actions of one player is rejected.
        """
        with pytest.raises(InvalidModel):
            parse_model('nfpg\nplayer a : x, y;\nrewards "a"\n  [x, y] : 1;\nendrewards\n')


class TestPrintModel:
    """
    Canonical printing of ASTs.
    """

    @pytest.mark.parametrize('name', list(builtin_models()))
    def test_bundled_models_round_trip(self, name):
        """
        Test that printing a bundled model and parsing it again gives an equal AST.
        """
        ast = builtin_models()[name].ast()

        assert parse_model(print_model(ast)) == ast

    def test_printing_is_stable(self):
        """
        Test that printing a printed model changes nothing.
        """
        text = print_model(parse_model(COUNTER))

        assert print_model(parse_model(text)) == text


class TestElaborate:
    """
    Constant binding and ground games.
    """

    def test_ultimatum_without_reciprocity_is_material(self):
        """
        Test that zero sensitivities leave the material payoffs only.
        """
        game = elaborate(parse_model(ULTIMATUM), {'theta1': 0, 'theta2': 0})

        assert game.is_classical()
        assert game.entry(0, ('greedy', 'accept')) == 9
        assert game.entry(1, ('greedy', 'accept')) == 1
        assert game.entry(0, ('greedy', 'reject')) == 0

    def test_zero_binding_removes_term(self):
        """
        Test that a constant bound to zero removes the term it multiplies.
        """
        game = elaborate(parse_model(ULTIMATUM), {'theta1': 0})

        assert game.entry(0, ('fair', 'accept')).is_constant()
        assert not game.entry(1, ('fair', 'accept')).is_constant()

    def test_unbound_constant(self):
        """
        Test that a constant without value or binding raises UnboundConstant.
        """
        with pytest.raises(UnboundConstant):
            elaborate(parse_model(COUNTER))

    def test_unknown_binding(self):
        """
        Test that binding an undeclared constant raises UnknownIdentifier.
        """
        with pytest.raises(UnknownIdentifier):
            bind_constants(parse_model(ULTIMATUM), {'theta3': 1})

    def test_declared_values_are_exact(self):
        """
        Test that declared constant values are kept as exact rationals.
        """
        env = bind_constants(builtin_models()['crossing_multi'].ast(), {'gamma': '0.3'})

        assert env == {'mu': 1, 'gamma': Fraction(3, 10), 'k': 5}

    def test_update_out_of_range(self):
        """
        Test that an update leaving its variable's range raises RangeError.
        """
        source = 'pcsg\nplayer a : x;\nv : [0..1] init 1;\n[x] true -> (v\'=v+1);\n'
        g = elaborate(parse_model(source))

        with pytest.raises(RangeError):
            g.transition((1,), ('x',))

    def test_command_free_state_loops(self):
        """
        Test that a state where no command fires idles and loops.
        """
        source = 'pcsg\nplayer a : x;\nv : [0..2] init 0;\n[x] v < 2 -> (v\'=v+1);\n'
        g = elaborate(parse_model(source))

        assert g.avail((2,)) == (('idle',),)
        assert g.transition((2,), ('idle',)) == {(2,): 1}

    @pytest.mark.parametrize('reward, message', [
        ('[y] : 1;', "action 'y', which no command offers"),
        ('[x] : 1 + y;', "action 'y', which no command offers"),
        ('true : x;', 'depends on action probabilities'),
    ])
    def test_reward_over_unoffered_action(self, reward, message):
        """
        Test that rewards naming actions no command offers are rejected when the model is built.
        """
        source = (f'pcsg\nplayer a : x, y;\nv : [0..1] init 0;\n[x] v < 1 -> (v\'=1);\n'
                  f'rewards "a"\n  {reward}\nendrewards\n')

        with pytest.raises(InvalidModel) as excinfo:
            elaborate(parse_model(source))

        assert message in str(excinfo.value)

    def test_initial_reward_over_unavailable_action(self):
        """
        Test that a reward in the initial state believing in an action not available there is rejected.
        """
        source = ('pcsg\nplayer a : x, y;\nv : [0..1] init 0;\n[x] v < 1 -> (v\'=1);\n[y] v > 0 -> (v\'=0);\n'
                  'rewards "a"\n  [x] : y;\nendrewards\n')

        with pytest.raises(InvalidModel) as excinfo:
            elaborate(parse_model(source))

        assert 'not available there' in str(excinfo.value)


class TestCatalog:
    """
    Bundled models and their direct constructors.
    """

    def test_catalog_contents(self):
        """
        Test that every bundled model is listed with its kind.
        """
        models = builtin_models()

        assert list(models) == ['confidence', 'example2', 'reciprocity', 'ultimatum', 'crossing',
                                'cyclist_vehicle', 'cyclist_bimatrix', 'crossing_multi']
        assert models['crossing_multi'].kind == 'pcsg'
        assert all(entry.kind == 'nfpg' for name, entry in models.items() if name != 'crossing_multi')

    @pytest.mark.parametrize('name, params', [
        ('confidence', {}),
        ('example2', {}),
        ('reciprocity', {}),
        ('reciprocity', {'theta1': Fraction(1, 4), 'theta2': Fraction(3, 4)}),
        ('ultimatum', {'theta1': 0, 'theta2': 1}),
        ('crossing', {}),
        ('crossing', {'mu': 0}),
        ('crossing', {'mu': 5}),
        ('cyclist_vehicle', {}),
        ('cyclist_bimatrix', {'p': Fraction(1, 3)}),
    ])
    def test_source_agrees_with_constructor(self, name, params):
        """
        Test that the bundled source and the constructor build identical games.
        """
        entry = builtin_models()[name]

        assert _same_nfpg(entry.build(params), entry.construct(**params))

    @pytest.mark.parametrize('params', [
        {'mu': 1, 'gamma': Fraction(1, 2), 'k': 3},
        {'mu': 2, 'gamma': 0, 'k': 2},
        {'mu': 1, 'gamma': 1, 'k': 3},
    ])
    def test_multi_stage_source_agrees_with_constructor(self, params):
        """
        Test that the stochastic model's source and constructor agree on every reachable state.
        """
        entry = builtin_models()['crossing_multi']

        assert _same_pcsg(entry.build(params), entry.construct(**params), int(params['k']))

    def test_confidence_shape(self):
        """
        Test that the confidence model has three players with action counts (1, 2, 2).
        """
        game = builtin_models()['confidence'].build()

        assert [len(a) for a in game.actions] == [1, 2, 2]

    def test_crossing_without_penalty(self):
        """
        Test that mu=0 removes the pedestrian's crossing penalty.
        """
        game = catalog.crossing(0)

        assert game.entry(1, ('r', 'c')).variables() == {ProbVar(0, 'r')}
        assert game.entry(1, ('m', 'c')).variables() == {ProbVar(0, 'm')}

    def test_cyclist_vehicle_stop_entry(self):
        """
        Test that the vehicle's (a, w, s) entry is 15.
        """
        game = catalog.cyclist_vehicle()

        assert game.entry(2, ('a', 'w', 's')) == 15

    def test_cyclist_bimatrix_matches_folded_payoffs(self):
        """
        Test the folded game against averaging the three-player payoffs over nature.
        """
        p = Fraction(9, 10)
        folded = catalog.cyclist_bimatrix(p)

        assert folded.entry(0, ('y', 'g')) == p * 5 + (1 - p) * 8
        assert folded.entry(0, ('y', 's')) == p * 3 + (1 - p) * 6
        assert folded.entry(0, ('w', 's')) == 15
        assert folded.entry(1, ('y', 'g')) == p * 7 + (1 - p) * 15

    @pytest.mark.parametrize('params', [{'theta1': 0, 'theta2': 0}, {'theta1': 1, 'theta2': 1}])
    def test_elaboration_over_documented_ranges(self, params):
        """
        Test that the offer games elaborate at the ends of their ranges.
        """
        for name in ('reciprocity', 'ultimatum'):
            assert builtin_models()[name].build(params).n_players == 2

    def test_load_unknown_model(self):
        """
        Test that a name that is neither bundled nor a file raises UnknownModel.
        """
        with pytest.raises(UnknownModel):
            load_model('no_such_model')

    def test_load_from_path(self, tmp_path):
        """
        Test that a model file is loaded under its file stem.
        """
        path = tmp_path / 'counter.pg'
        path.write_text(COUNTER, encoding='utf-8')

        name, ast = load_model(str(path))

        assert name == 'counter'
        assert ast.kind == 'pcsg'


class TestResults:
    """
    Result records and their serialization.
    """

    @pytest.fixture(scope='function')
    def confidence_record(self, confidence_game):
        """A record holding the pure (r2, r3) confidence-game equilibrium."""
        profile = StrategyProfile.from_mapping(confidence_game, {'a2': 0, 'a3': 0})
        candidate = EquilibriumCandidate.from_profile(confidence_game, profile, 0.0)
        row = EquilibriumRow.from_candidate(confidence_game.players, candidate)
        return ResultRecord('confidence', {}, [row])

    def test_row_welfare_is_payoff_sum(self, confidence_record):
        """
        Test that row welfare equals the sum of utilities.
        """
        row = confidence_record.equilibria[0]

        assert row.welfare == pytest.approx(sum(row.utilities.values()), abs=1e-9)
        assert row.support == '{idle}x{r2}x{r3}'

    def test_csv_shape(self, confidence_record):
        """
        Test that one equilibrium gives five probability rows and three utility rows.
        """
        lines = render_results([confidence_record], 'csv').splitlines()

        assert lines[0] == 'model,eq_index,player,action,prob,utility,welfare,residual'
        body = [line.split(',') for line in lines[1:]]
        assert len(body) == 8
        assert sum(1 for row in body if row[3]) == 5
        assert sum(1 for row in body if not row[3]) == 3
        assert body[0] == ['confidence', '0', 'p1', 'idle', '1', '', '1', '0']

    def test_csv_parameters_and_status(self):
        """
        Test parameter columns and the status column of failed sweep points.
        """
        records = [ResultRecord('crossing', {'mu': 5.0}, [], 'no_equilibrium')]

        lines = render_results(records, 'csv').splitlines()

        assert lines[0] == 'model,param:mu,eq_index,player,action,prob,utility,welfare,residual,status'
        assert lines[1] == 'crossing,5,,,,,,,,no_equilibrium'

    def test_json_round_trip(self, confidence_record, tmp_path):
        """
        Test that records written as JSON read back equal.
        """
        path = tmp_path / 'results.json'

        write_results([confidence_record], 'json', str(path))

        assert read_results(str(path), 'json') == [confidence_record]

    def test_csv_round_trip(self, confidence_record):
        """
        Test that CSV read-back restores probabilities, utilities and support.
        """
        buffer = io.StringIO()
        write_results([confidence_record], 'csv', buffer)
        buffer.seek(0)

        (record,) = read_results(buffer, 'csv')

        assert record.equilibria[0].probabilities == confidence_record.equilibria[0].probabilities
        assert record.equilibria[0].utilities == confidence_record.equilibria[0].utilities
        assert record.equilibria[0].support == confidence_record.equilibria[0].support

    def test_unwritable_destination(self, confidence_record, tmp_path):
        """
        Test that writing into a missing directory raises ResultsIoError.
        """
        with pytest.raises(ResultsIoError):
            write_results([confidence_record], 'csv', str(tmp_path / 'missing' / 'out.csv'))

    def test_malformed_json(self):
        """
        Test that malformed input raises ResultsIoError.
        """
        with pytest.raises(ResultsIoError):
            read_results(io.StringIO('{"not": "a list"'), 'json')

    def test_experiment_csv(self):
        """
        Test the long format of experiment reports.
        """
        report = ExperimentReport(runs=1, players=('vehicle', 'pedestrian'), initial_utilities=[(1.0, 2.0)],
                                  action_probabilities=[{'c': 0.25}], utility_mean=(1.0, 2.0),
                                  utility_std=(0.0, 0.0), action_mean={'c': 0.25}, action_std={'c': 0.0})

        lines = render_experiment('crossing_multi', {'mu': 1.0}, report, 'csv').splitlines()

        assert lines[0] == 'model,param:mu,run,quantity,name,value'
        assert lines[1] == 'crossing_multi,1,0,utility,vehicle,1'
        assert lines[3] == 'crossing_multi,1,0,action,c,0.25'
        assert lines[-1] == 'crossing_multi,1,std,action,c,0'
        assert json.loads(render_experiment('crossing_multi', {}, report, 'json'))['report']['runs'] == 1

    def test_experiment_csv_with_state_classes(self):
        """
        Test that per-class action probabilities follow each run's actions as CLASS:ACTION rows.
        """
        report = ExperimentReport(runs=1, players=('vehicle', 'pedestrian'), initial_utilities=[(1.0, 2.0)],
                                  action_probabilities=[{'c': 0.25}], utility_mean=(1.0, 2.0),
                                  utility_std=(0.0, 0.0), action_mean={'c': 0.25}, action_std={'c': 0.0},
                                  class_probabilities=[{'step0': {'c': 0.5}, 'step1': {'c': 0.0}}],
                                  class_mean={'step0': {'c': 0.5}, 'step1': {'c': 0.0}},
                                  class_std={'step0': {'c': 0.0}, 'step1': {'c': 0.0}})

        lines = render_experiment('crossing_multi', {}, report, 'csv').splitlines()

        assert lines[4:6] == ['crossing_multi,0,class_action,step0:c,0.5', 'crossing_multi,0,class_action,step1:c,0']
        assert 'crossing_multi,mean,class_action,step0:c,0.5' in lines
        assert len(lines) == 1 + 3 * 5
        report_json = json.loads(render_experiment('crossing_multi', {}, report, 'json'))['report']
        assert report_json['class_mean']['step0'] == {'c': 0.5}
