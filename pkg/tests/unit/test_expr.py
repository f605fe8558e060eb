from fractions import Fraction

import numpy as np
import pytest

from psygames.exceptions import ExprSyntaxError, MissingAssignment, NonPolynomial, UnknownVariable
from psygames.services.expr import (
    IDLE_ACTION,
    PolyExpr,
    PolySystem,
    ProbVar,
    eval_expr,
    grad_expr,
    parse_expr,
    substitute,
    unparse,
)

A2 = ProbVar(1, 'a2')
A3 = ProbVar(2, 'a3')
VOCAB = [ProbVar(0, IDLE_ACTION), A2, ProbVar(1, 'r2'), A3, ProbVar(2, 'r3')]


class TestParseExpr:
    """
    Parsing expression text into canonical polynomials.
    """

    def test_confidence_entry(self):
        """
        Test that an entry of the confidence game parses to its expanded form.
        """
        e = parse_expr('1/2 - 3/2*(a2 + a3)', VOCAB)

        assert e.terms[()] == Fraction(1, 2)
        assert e.terms[(A2,)] == Fraction(-3, 2)
        assert e.terms[(A3,)] == Fraction(-3, 2)
        assert e.degree() == 1

    def test_decimals_are_exact(self):
        """
        Test that decimal literals become exact rationals, not binary floats.
        """
        e = parse_expr('0.1 + 0.2', [])

        assert e == Fraction(3, 10)
        assert e.is_constant()

    def test_constants_resolve_before_actions(self):
        """
        Test that a name bound as a constant shadows an action of the same name.
        """
        e = parse_expr('2*a2', VOCAB, {'a2': 5})

        assert e == 10

    def test_powers_and_products_are_canonical(self):
        """
        Test that equal polynomials written differently compare equal.
        """
        left = parse_expr('(a2 + a3)^2', VOCAB)
        right = parse_expr('a3*a3 + 2*a2*a3 + a2^2', VOCAB)

        assert left == right
        assert hash(left) == hash(right)

    def test_zero_coefficients_vanish(self):
        """
        Test that terms cancelling to zero are dropped from the canonical form.
        """
        e = parse_expr('a2 - a2 + 0*a3', VOCAB)

        assert e.is_zero()
        assert unparse(e) == '0'

    def test_unparse_round_trips(self):
        """
        Test that rendering a polynomial and parsing it back gives the same polynomial.
        """
        e = parse_expr('3 - 400/81*a2^2 + 40/9*a2*a3 - a3', VOCAB)

        assert parse_expr(unparse(e), VOCAB) == e

    def test_syntax_error_reports_position(self):
        """
        Test that malformed text raises ExprSyntaxError with a position.
        """
        with pytest.raises(ExprSyntaxError) as excinfo:
            parse_expr('1 + * a2', VOCAB)

        assert excinfo.value.position >= 0

    def test_unknown_variable(self):
        """
        Test that an undeclared name raises UnknownVariable naming it.
        """
        with pytest.raises(UnknownVariable) as excinfo:
            parse_expr('a2 + z9', VOCAB)

        assert excinfo.value.name == 'z9'

    def test_idle_is_not_a_variable(self):
        """
        Test that the idle placeholder cannot be referenced in expressions.
        """
        with pytest.raises(UnknownVariable):
            parse_expr('idle', VOCAB)

    @pytest.mark.parametrize('text', ['1/a2', 'a2^a3', 'a2^(1/2)', 'min(a2, a3)', '1/(a2 - a2)'])
    def test_non_polynomial(self, text):
        """
        Test that division by variables, variable or fractional exponents,
        function calls and division by zero are rejected.
        """
        with pytest.raises(NonPolynomial):
            parse_expr(text, VOCAB)


class TestEvaluation:
    """
    Evaluation, differentiation and substitution of polynomials.
    """

    def test_eval_is_exact_for_rationals(self):
        """
        Test that evaluation at rational points returns an exact Fraction.
        """
        e = parse_expr('40/9*a2 - 400/81*a2^2', VOCAB)

        value = eval_expr(e, {A2: Fraction(9, 20)})

        assert value == Fraction(1)

    def test_missing_assignment(self):
        """
        Test that evaluating without a value for a used variable raises MissingAssignment.
        """
        with pytest.raises(MissingAssignment):
            eval_expr(parse_expr('a2 + a3', VOCAB), {A2: 1})

    def test_gradient(self):
        """
        Test the formal derivative of a product with a repeated variable.
        """
        e = parse_expr('a2^3*a3 + 2*a3', VOCAB)

        assert grad_expr(e, A2) == parse_expr('3*a2^2*a3', VOCAB)
        assert grad_expr(e, A3) == parse_expr('a2^3 + 2', VOCAB)
        assert grad_expr(e, ProbVar(1, 'r2')).is_zero()

    def test_full_substitution_matches_evaluation(self):
        """
        Test that substituting every variable yields the evaluated constant.
        """
        e = parse_expr('1 + a2 + a3 - a2*a3', VOCAB)
        point = {A2: Fraction(1, 3), A3: Fraction(3, 4)}

        assert substitute(e, point) == eval_expr(e, point)

    def test_partial_substitution_keeps_other_variables(self):
        """
        Test that substituting a subset leaves the remaining variables symbolic.
        """
        e = parse_expr('a2*a3 + a2', VOCAB)

        assert substitute(e, {A2: 0}).is_zero()
        assert substitute(e, {A2: 2}) == parse_expr('2*a3 + 2', VOCAB)

    def test_arithmetic_with_numbers(self):
        """
        Test that PolyExpr mixes with plain numbers on either side.
        """
        x = PolyExpr.var(A2)

        assert 1 - x == parse_expr('1 - a2', VOCAB)
        assert (2 * x + 1) * x == parse_expr('2*a2^2 + a2', VOCAB)


class TestPolySystem:
    """
    Batched floating-point evaluation.
    """

    def test_values_match_exact_evaluation(self):
        """
        Test that batch values agree with exact evaluation at each point.
        """
        polys = [parse_expr('1 + a2 + a3', VOCAB), parse_expr('a2^2*a3 - 3', VOCAB)]
        system = PolySystem(polys, [A2, A3])
        X = np.array([[0.0, 0.0], [0.5, 0.25], [1.0, 1.0]])

        values = system.values(X)

        assert values.shape == (3, 2)
        for row, (x2, x3) in enumerate(X):
            for col, p in enumerate(polys):
                assert values[row, col] == pytest.approx(float(eval_expr(p, {A2: x2, A3: x3})))

    def test_jacobian_matches_finite_differences(self):
        """
        Test the analytic Jacobian against central differences at random points.
        """
        polys = [parse_expr('a2^3 - 2*a2*a3 + 5*a3^2', VOCAB), parse_expr('4 - a3', VOCAB)]
        system = PolySystem(polys, [A2, A3])
        rng = np.random.default_rng(3)
        X = rng.uniform(0.0, 1.0, size=(20, 2))
        h = 1e-6

        jac = system.jacobian(X)

        for k in range(2):
            step = np.zeros(2)
            step[k] = h
            numeric = (system.values(X + step) - system.values(X - step)) / (2 * h)
            assert np.allclose(jac[:, :, k], numeric, atol=1e-5)

    def test_constant_system_without_variables(self):
        """
        Test that a system over no variables still evaluates its constants.
        """
        system = PolySystem([PolyExpr.const(Fraction(7, 2))], [])

        assert system.values(np.zeros((1, 0)))[0, 0] == pytest.approx(3.5)
        assert system.jacobian(np.zeros((1, 0))).shape == (1, 1, 0)
