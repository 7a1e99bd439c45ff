import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from repeaterchain.chain import FidelityModel, end_to_end_param, fidelity_of
from repeaterchain.pauli import (
    IDENTITY,
    LambdaVector,
    PauliChannel,
    age_parameters,
    brute_force_compose,
    compose,
    compose_all,
    depolarizing,
    fidelity_from_ages,
    from_lambda,
    to_lambda,
)


@st.composite
def channels(draw):
    w = draw(st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-3))
    total = sum(w)
    p = [x / total for x in w]
    p[0] = 1.0 - sum(p[1:])
    return PauliChannel(*p)


def close(c1, c2, tol=1e-12):
    return np.allclose(c1.as_array(), c2.as_array(), atol=tol, rtol=0)


def test_validation():
    with pytest.raises(ValueError):
        PauliChannel(0.5, 0.5, 0.5, 0.0)
    with pytest.raises(ValueError):
        PauliChannel(1.2, -0.2, 0, 0)
    with pytest.raises(ValueError):
        LambdaVector(0.9, 0, 0, 0)
    with pytest.raises(ValueError):
        from_lambda(LambdaVector(1.0 + 1e-9, 1, 1, 1))


def test_to_lambda_examples():
    assert to_lambda(IDENTITY).as_array().tolist() == [1, 1, 1, 1]
    a = 0.37
    assert np.allclose(to_lambda(depolarizing(a)).as_array(), [1, a, a, a], atol=1e-15)
    assert to_lambda(PauliChannel(0.5, 0, 0, 0.5)).as_array().tolist() == [1, 0, 0, 1]


def test_from_lambda_examples():
    assert close(from_lambda(LambdaVector(1, 1, 1, 1)), IDENTITY)
    assert close(from_lambda(LambdaVector(1, 0.2, 0.2, 0.2)), depolarizing(0.2))
    assert close(from_lambda(LambdaVector(1, 0, 0, 1)), PauliChannel(0.5, 0, 0, 0.5))


@given(channels())
def test_roundtrip(c):
    assert close(from_lambda(to_lambda(c)), c)


@given(channels())
def test_identity_is_neutral(c):
    assert close(compose(IDENTITY, c), c)
    assert close(compose(c, IDENTITY), c)


@given(channels(), channels())
def test_compose_matches_brute_force(c1, c2):
    assert close(compose(c1, c2), brute_force_compose(c1, c2))


def test_brute_force_x_entry():
    c1 = PauliChannel(0.4, 0.3, 0.2, 0.1)
    c2 = PauliChannel(0.1, 0.2, 0.3, 0.4)
    expected_x = 0.4 * 0.2 + 0.3 * 0.1 + 0.2 * 0.4 + 0.1 * 0.3
    assert brute_force_compose(c1, c2).p_X == pytest.approx(expected_x, abs=1e-15)


@given(st.floats(0, 1), st.floats(0, 1))
def test_depolarizing_closure(a, b):
    assert close(compose(depolarizing(a), depolarizing(b)), depolarizing(a * b))
    assert close(brute_force_compose(depolarizing(a), depolarizing(b)), depolarizing(a * b))


@given(channels(), channels(), channels())
def test_associative_commutative(a, b, c):
    assert close(compose(a, b), compose(b, a))
    assert close(compose(compose(a, b), c), compose(a, compose(b, c)))


@given(channels(), channels())
def test_composition_stays_valid(a, b):
    out = compose(a, b).as_array()
    assert np.all(out >= -1e-12) and abs(out.sum() - 1) < 1e-12


def test_fidelity_single_depolarizing_matches_chain_core():
    T = 7.5
    c = depolarizing(math.exp(-1 / T))
    for t in range(0, 20):
        expected = fidelity_of(end_to_end_param(FidelityModel(1.0, T), 1, t))
        assert fidelity_from_ages([c], [t]) == pytest.approx(expected, abs=1e-12)


@given(st.lists(channels(), min_size=1, max_size=4))
def test_zero_ages_give_unit_fidelity(cs):
    assert fidelity_from_ages(cs, [0] * len(cs)) == pytest.approx(1.0, abs=1e-15)


@given(channels(), channels(), st.integers(0, 6), st.integers(0, 6))
def test_fidelity_matches_repeated_composition(c1, c2, t1, t2):
    composed = compose_all([c1] * t1 + [c2] * t2)
    assert fidelity_from_ages([c1, c2], [t1, t2]) == pytest.approx(composed.fidelity, abs=1e-10)
    brute = IDENTITY
    for c in [c1] * t1 + [c2] * t2:
        brute = brute_force_compose(brute, c)
    assert fidelity_from_ages([c1, c2], [t1, t2]) == pytest.approx(brute.fidelity, abs=1e-10)


def test_negative_lambda_channel():
    # pure Y flip has lambdas (1, -1, 1, -1); odd powers stay negative
    y = PauliChannel(0, 0, 1, 0)
    assert fidelity_from_ages([y], [1]) == pytest.approx(0.0, abs=1e-15)
    assert fidelity_from_ages([y], [2]) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        age_parameters([y], [1])


@st.composite
def positive_channels(draw):
    # convex mixtures with p_I >= 1/2 keep every lambda non-negative
    c = draw(channels())
    p = 0.5 * IDENTITY.as_array() + 0.5 * c.as_array()
    return PauliChannel(*p)


@given(st.lists(positive_channels(), min_size=1, max_size=3), st.data())
def test_fidelity_monotone_in_ages(cs, data):
    ages = data.draw(st.lists(st.integers(0, 5), min_size=len(cs), max_size=len(cs)))
    base = fidelity_from_ages(cs, ages)
    for i in range(len(cs)):
        bumped = list(ages)
        bumped[i] += 1
        assert fidelity_from_ages(cs, bumped) <= base + 1e-15


def test_age_parameters_exponential_form():
    cs = [PauliChannel(0.9, 0.05, 0.03, 0.02), PauliChannel(0.8, 0.1, 0.05, 0.05)]
    ages = [3, 2]
    params = age_parameters(cs, ages)
    via_exp = (1 + sum(math.exp(-g) for g in params)) / 4
    assert via_exp == pytest.approx(fidelity_from_ages(cs, ages), abs=1e-13)


def test_length_mismatch():
    with pytest.raises(ValueError):
        fidelity_from_ages([IDENTITY], [1, 2])
