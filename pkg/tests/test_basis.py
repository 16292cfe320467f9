import numpy as np
import pytest

from hevicore import basis as bs


def moment_weights(nodes):
    """Derive quadrature weights from the moment conditions (oracle)."""
    n = len(nodes)
    V = np.vander(nodes, n, increasing=True).T
    moments = np.array([(1.0 - (-1.0) ** (k + 1)) / (k + 1) for k in range(n)])
    return np.linalg.solve(V, moments)


def test_lobatto_rejects_degree_zero():
    with pytest.raises(ValueError):
        bs.lobatto(0)


def test_n1_endpoints_only():
    b = bs.lobatto(1)
    assert np.allclose(b.nodes, [-1.0, 1.0])
    assert np.allclose(b.weights, [1.0, 1.0])


def test_n2_moment_condition_weights():
    b = bs.lobatto(2)
    assert np.allclose(b.nodes, [-1.0, 0.0, 1.0], atol=1e-15)
    # oracle: solve exactness conditions for xi^k, k <= 3
    w = moment_weights(b.nodes)
    assert np.allclose(b.weights, w, atol=1e-14)
    assert np.allclose(b.weights, [1 / 3, 4 / 3, 1 / 3], atol=1e-14)


def test_n4_integrates_xi6():
    b = bs.lobatto(4)
    val = bs.integrate(b, b.nodes**6)
    assert abs(val - 2.0 / 7.0) < 1e-12


@pytest.mark.parametrize("N", [1, 2, 3, 4, 6, 8, 12, 16])
def test_basic_invariants(N):
    b = bs.lobatto(N)
    assert b.nodes[0] == -1.0 and b.nodes[-1] == 1.0
    assert np.all(np.diff(b.nodes) > 0)
    assert abs(np.sum(b.weights) - 2.0) < 1e-14
    # derivative of a constant vanishes
    assert np.max(np.abs(bs.differentiate(b, np.ones(N + 1)))) < 1e-13


@pytest.mark.parametrize("N", [2, 4, 7])
def test_quadrature_exact_to_2N_minus_1(N):
    b = bs.lobatto(N)
    rng = np.random.default_rng(7)
    for _ in range(5):
        coeffs = rng.standard_normal(2 * N)  # degree 2N-1
        p = np.polynomial.Polynomial(coeffs)
        exact = p.integ()(1.0) - p.integ()(-1.0)
        got = bs.integrate(b, p(b.nodes))
        assert abs(got - exact) <= 1e-12 * max(1.0, abs(exact))


def test_differentiate_length_mismatch():
    b = bs.lobatto(3)
    with pytest.raises(ValueError):
        bs.differentiate(b, np.ones(3))


def test_differentiate_quadratic_exact():
    b = bs.lobatto(2)
    got = bs.differentiate(b, b.nodes**2)
    assert np.allclose(got, 2.0 * b.nodes, atol=1e-13)


@pytest.mark.parametrize("N", [3, 5, 9])
def test_differentiate_random_polynomial(N):
    b = bs.lobatto(N)
    rng = np.random.default_rng(N)
    coeffs = rng.standard_normal(N + 1)
    p = np.polynomial.Polynomial(coeffs)
    got = bs.differentiate(b, p(b.nodes))
    want = p.deriv()(b.nodes)
    assert np.max(np.abs(got - want)) < 1e-12 * max(1.0, np.max(np.abs(want)))


def test_second_derivative_on_low_degree_data():
    N = 6
    b = bs.lobatto(N)
    rng = np.random.default_rng(3)
    coeffs = rng.standard_normal(N)  # degree N-1
    p = np.polynomial.Polynomial(coeffs)
    got = bs.differentiate(b, bs.differentiate(b, p(b.nodes)))
    want = p.deriv(2)(b.nodes)
    assert np.max(np.abs(got - want)) < 1e-10


def test_cardinality():
    b = bs.lobatto(5)
    L = bs.cardinal_values(b, b.nodes)
    assert np.allclose(L, np.eye(6), atol=1e-13)


def test_interpolation_identity_and_offnode_eval():
    b = bs.lobatto(4)
    rng = np.random.default_rng(11)
    vals = rng.standard_normal(5)
    assert np.allclose(bs.interpolate(b, vals, b.nodes), vals, atol=1e-13)
    p = np.polynomial.Polynomial(rng.standard_normal(5))
    x = np.linspace(-1, 1, 17)
    assert np.allclose(bs.interpolate(b, p(b.nodes), x), p(x), atol=1e-12)


class TestFluxDifference:
    def test_constant_p(self):
        b = bs.lobatto(3)
        rng = np.random.default_rng(0)
        assert bs.flux_difference_check(b, np.full(4, 2.5), rng.standard_normal(4))

    def test_p_equals_q_linear(self):
        b = bs.lobatto(4)
        assert bs.flux_difference_check(b, b.nodes, b.nodes, tol=1e-14)

    def test_random_n4(self):
        b = bs.lobatto(4)
        rng = np.random.default_rng(42)
        for _ in range(10):
            assert bs.flux_difference_check(
                b, rng.standard_normal(5), rng.standard_normal(5)
            )

    def test_length_mismatch(self):
        b = bs.lobatto(2)
        with pytest.raises(ValueError):
            bs.flux_difference_check(b, np.ones(3), np.ones(4))
