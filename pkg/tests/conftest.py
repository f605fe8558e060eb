import pytest
from click.testing import CliRunner

from psygames.config import TestingConfig
from psygames.modelio import catalog
from psygames.services.game_core import Nfpg
from psygames.services.nlp import SolverConfig


@pytest.fixture(scope='function')
def solver_config():
    """
    Solver settings built from the testing configuration.

    The testing configuration uses fewer multi-start points than the default
    so that the bundled games solve quickly, while keeping the fixed seed.
    """
    return SolverConfig.from_config(TestingConfig)


@pytest.fixture(scope='function')
def confidence_game():
    """The three-player confidence game with an observing first player."""
    return catalog.confidence()


@pytest.fixture(scope='function')
def crossing_game():
    """The one-shot pedestrian crossing game at its default penalty mu=2."""
    return catalog.crossing()


@pytest.fixture(scope='function')
def prisoners_dilemma():
    """
    A classical prisoner's dilemma with constant utilities.

    Defection strictly dominates cooperation, so (d1, d2) is the unique
    equilibrium.
    """
    u1 = {('c1', 'c2'): 3, ('c1', 'd2'): 0, ('d1', 'c2'): 5, ('d1', 'd2'): 1}
    u2 = {('c1', 'c2'): 3, ('c1', 'd2'): 5, ('d1', 'c2'): 0, ('d1', 'd2'): 1}
    return Nfpg.from_tables(['row', 'col'], [('c1', 'd1'), ('c2', 'd2')], [u1, u2], name='pd')


@pytest.fixture(scope='function')
def matching_pennies():
    """Matching pennies: no pure equilibrium, the unique mixed one is uniform."""
    u1 = {('h1', 'h2'): 1, ('h1', 't2'): -1, ('t1', 'h2'): -1, ('t1', 't2'): 1}
    u2 = {('h1', 'h2'): -1, ('h1', 't2'): 1, ('t1', 'h2'): 1, ('t1', 't2'): -1}
    return Nfpg.from_tables(['row', 'col'], [('h1', 't1'), ('h2', 't2')], [u1, u2], name='pennies')


@pytest.fixture(scope='function')
def runner(monkeypatch):
    """
    Fixture for the click CLI test runner.

    ``PG_ENV`` selects the testing configuration so commands run with the
    reduced solver settings and without a log file.
    """
    monkeypatch.setenv('PG_ENV', 'testing')
    return CliRunner()
