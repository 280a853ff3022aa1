import numpy as np
import pytest

from exbubble.domains import BoxExhaustion
from exbubble.domains import PredicateExhaustion
from exbubble.exceptions import ExhaustionError


def bessel_box(depth=1000):
    return BoxExhaustion.from_strings(lower=['1/n'], upper=['n+1'], depth=depth)


# Test Parameters
bounds_params = {
    'first_level': (1, (1.0, 2.0)),
    'second_level': (2, (0.5, 3.0)),
    'deepest_level': (1000, (0.001, 1001.0)),
}

nested_error_params = {
    'shrinking_upper': (['-n'], ['3-n'], [0.0]),
    'constant_lower': (['0'], ['n'], [0.5]),
    'x0_outside_first_level': (['-n'], ['n'], [1.5]),
}


@pytest.mark.parametrize('n, expected', list(bounds_params.values()),
                         ids=list(bounds_params.keys()))
def test_box_bounds(n, expected):
    lo, hi = bessel_box().bounds(n)
    assert (lo[0], hi[0]) == pytest.approx(expected)


def test_box_is_closed():
    box = bessel_box()
    X = np.array([[1.0, 2.0, 0.999, 2.001, 1.5]])
    assert box.contains(1, X).tolist() == [True, True, False, False, True]


def test_box_level_out_of_range():
    with pytest.raises(ExhaustionError):
        bessel_box(depth=4).bounds(5)
    with pytest.raises(ExhaustionError):
        bessel_box(depth=4).bounds(0)


def test_unbounded_coordinates():
    box = BoxExhaustion.from_strings(lower=[None, '-n'], upper=[None, 'n'], depth=3)
    X = np.array([[1e9, -1e9, 0.0],
                  [0.5, 0.5, 2.5]])
    assert box.contains(1, X).tolist() == [True, True, False]
    assert box.contains(3, X).tolist() == [True, True, True]
    assert box.contains(3, np.array([[1e300], [2.999]]))[0]


def test_contains_levels_matches_contains():
    box = bessel_box(depth=8)
    predicate = PredicateExhaustion(
        member=lambda n, X: ((X >= 1.0 / n) & (X <= n + 1.0)).all(axis=0), dim=1, depth=8)
    X = np.array([[1.0, 0.4, 2.5, 9.5, 0.15, 3.0]])
    ns = np.array([1, 2, 2, 8, 8, 1])
    expected = [box.contains(n, X[:, [k]])[0] for k, n in enumerate(ns)]
    assert expected == [True, False, True, False, True, False]
    assert box.contains_levels(ns, X).tolist() == expected
    assert predicate.contains_levels(ns, X).tolist() == expected
    with pytest.raises(ExhaustionError):
        box.contains_levels([9], X[:, :1])


def test_x0_on_the_boundary_of_the_first_level_is_accepted():
    bessel_box().check_nested([1.0])


@pytest.mark.parametrize('lower, upper, x0', list(nested_error_params.values()),
                         ids=list(nested_error_params.keys()))
def test_nesting_errors(lower, upper, x0):
    box = BoxExhaustion.from_strings(lower=lower, upper=upper, depth=5)
    with pytest.raises(ExhaustionError):
        box.check_nested(x0)


def test_bound_that_fails_to_evaluate():
    with pytest.raises(ExhaustionError, match='n=1'):
        BoxExhaustion.from_strings(lower=['log(n-1)'], upper=['n'], depth=3)


def test_first_exits():
    box = BoxExhaustion.from_strings(lower=['-n'], upper=['n'], depth=4)
    # steps x dim x paths
    X = np.array([0.0, 2.0, 4.0, np.nan]).reshape(4, 1, 1)
    exits = box.first_exits(X, [1, 2, 3, 4])
    assert exits[:, 0].tolist() == [1, 2, 2, 3]


def test_first_exits_never_leaving():
    box = BoxExhaustion.from_strings(lower=['-n'], upper=['n'], depth=2)
    X = np.zeros((5, 1, 3))
    assert (box.first_exits(X, [1, 2]) == 5).all()


def test_box_and_predicate_exits_agree():
    box = BoxExhaustion.from_strings(lower=['-n', '-n'], upper=['n', 'n'], depth=4)
    predicate = PredicateExhaustion(
        member=lambda n, X: (np.abs(X) <= n).all(axis=0), dim=2, depth=4)
    rng = np.random.default_rng(3)
    X = np.cumsum(rng.standard_normal((50, 2, 20)), axis=0)
    levels = [1, 2, 3, 4]
    np.testing.assert_array_equal(box.first_exits(X, levels),
                                  predicate.first_exits(X, levels))


def test_predicate_exhaustion():
    disc = PredicateExhaustion(
        member=lambda n, X: (X ** 2).sum(axis=0) <= n ** 2, dim=2, depth=10)
    disc.check_nested([0.5, 0.5])
    assert disc.contains(1, np.array([[0.6], [0.6]]))[0]
    assert not disc.contains(1, np.array([[0.8], [0.8]]))[0]
    with pytest.raises(ExhaustionError):
        disc.check_nested([2.0, 0.0])


def test_sample_states_lie_in_the_first_level():
    box = bessel_box()
    grid = box.sample_states([1.0], count=32)
    assert grid.shape == (1, 32)
    assert box.contains(1, grid).all()
