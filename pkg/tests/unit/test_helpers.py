from fractions import Fraction

import pytest

from psygames.utils.helpers import (
    format_number,
    get_env_variable,
    parse_binding,
    parse_profile,
    parse_sweep,
    sweep_grid,
)


class TestParsing:
    """
    Command-line value parsing.
    """

    def test_binding(self):
        """
        Test that bindings parse to exact rationals.
        """
        assert parse_binding('theta1=0.25') == ('theta1', Fraction(1, 4))
        assert parse_binding(' p = 1/3 ') == ('p', Fraction(1, 3))

    @pytest.mark.parametrize('text', ['theta1', '=1', 'mu=abc', 'mu=1/0'])
    def test_bad_binding(self, text):
        """
        Test that malformed bindings raise ValueError.
        """
        with pytest.raises(ValueError):
            parse_binding(text)

    def test_sweep_hits_upper_bound_exactly(self):
        """
        Test that decimal steps land exactly on the upper bound.
        """
        name, values = parse_sweep('theta1=0:1:0.25')

        assert name == 'theta1'
        assert values == [0, Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), 1]

    def test_single_point_sweep(self):
        """
        Test that lo == hi gives a single point.
        """
        assert parse_sweep('mu=2:2:1') == ('mu', [2])

    @pytest.mark.parametrize('text', ['mu=0:1', 'mu=1:0:1', 'mu=0:1:0', 'mu=0:1:-1', 'mu'])
    def test_bad_sweep(self, text):
        """
        Test that malformed sweeps, reversed bounds and non-positive steps are rejected.
        """
        with pytest.raises(ValueError):
            parse_sweep(text)

    def test_grid_order(self):
        """
        Test that the first axis varies slowest.
        """
        grid = sweep_grid([('a', [0, 1]), ('b', [5, 6, 7])])

        assert len(grid) == 6
        assert grid[0] == {'a': 0, 'b': 5}
        assert grid[1] == {'a': 0, 'b': 6}
        assert grid[-1] == {'a': 1, 'b': 7}

    def test_grid_rejects_repeated_axis(self):
        """
        Test that sweeping one parameter twice is an error.
        """
        with pytest.raises(ValueError):
            sweep_grid([('a', [0]), ('a', [1])])

    def test_profile(self):
        """
        Test that player prefixes are optional and values exact.
        """
        assert parse_profile(['vehicle.r=3/4', 'c=0.5']) == {'r': Fraction(3, 4), 'c': Fraction(1, 2)}

    def test_profile_repeated_action(self):
        """
        Test that an action given twice is rejected.
        """
        with pytest.raises(ValueError):
            parse_profile(['r=1', 'vehicle.r=0'])


class TestFormatting:
    """
    Number rendering in reports.
    """

    @pytest.mark.parametrize('value, text', [
        (1.0, '1'),
        (Fraction(1, 3), '0.333333333333'),
        (-0.0, '0'),
        (-1e-20, '-1e-20'),
        (0.45, '0.45'),
    ])
    def test_format_number(self, value, text):
        """
        Test twelve significant digits without negative zero.
        """
        assert format_number(value) == text

    def test_env_variable_default(self, monkeypatch):
        """
        Test that unset variables fall back to the default.
        """
        monkeypatch.delenv('PG_UNSET_FOR_TEST', raising=False)

        assert get_env_variable('PG_UNSET_FOR_TEST', 'fallback') == 'fallback'
