import dataclasses
import itertools
import math

import numpy as np
import pytest

from exbubble import bessel
from exbubble.bessel import bessel_model
from exbubble.exceptions import ConfigError
from exbubble.exceptions import EstimatorError
from exbubble.exceptions import MeasureError
from exbubble.model import numeraire_adjust
from exbubble.presets import gbm_pair_model
from exbubble.pricing import MCConfig
from exbubble.pricing import MCEstimate
from exbubble.pricing import Method
from exbubble.pricing import SampleSet
from exbubble.pricing import amer_exchange
from exbubble.pricing import clear_cache
from exbubble.pricing import default_probability
from exbubble.pricing import early_exercise_premium
from exbubble.pricing import eep_samples
from exbubble.pricing import eur_exchange
from exbubble.pricing import eur_samples
from exbubble.pricing import ladder_samples

from exbubble.tests.data import BESSEL_CONFIG
from exbubble.tests.data import DEGENERACY_CONFIG
from exbubble.tests.data import GBM_CONFIG
from exbubble.tests.data import equal_vol_model
from exbubble.tests.data import margrabe_reference

K = 1.0
T = 1.0

# Test Parameters
bessel_eur_params = {
    '01_qj_put': ((0, 1, Method.QJ_PUT), bessel.eur_ex_01(K, T)),
    '01_p_deflated': ((0, 1, Method.P_DEFLATED), bessel.eur_ex_01(K, T)),
    '01_prob_diff': ((0, 1, Method.PROB_DIFF), bessel.eur_ex_01(K, T)),
    '01_qi_call': ((0, 1, Method.QI_CALL), bessel.eur_ex_01(K, T)),
    '10_qj_put': ((1, 0, Method.QJ_PUT), bessel.eur_ex_10(K, T)),
    '10_p_deflated': ((1, 0, Method.P_DEFLATED), bessel.eur_ex_10(K, T)),
    '10_prob_diff': ((1, 0, Method.PROB_DIFF), bessel.eur_ex_10(K, T)),
    '10_qi_call': ((1, 0, Method.QI_CALL), bessel.eur_ex_10(K, T)),
}

gbm_pairs = {
    'risky_for_risky': (1, 2, math.sqrt(0.2 ** 2 + 0.3 ** 2 - 2 * 0.5 * 0.2 * 0.3)),
    'risky_for_bank': (1, 0, 0.2),
    'bank_for_risky': (0, 2, 0.3),
}

estimate_params = {
    'plain': ([1.0, 2.0, 3.0, 4.0], (2.5, math.sqrt(5.0 / 12.0), 4, 0)),
    'missing_values_dropped': ([1.0, np.nan, 3.0], (2.0, 1.0, 2, 1)),
    'single_sample': ([7.0], (7.0, 0.0, 1, 0)),
}


@pytest.fixture(autouse=True, scope='module')
def fresh_cache():
    clear_cache()
    yield
    clear_cache()


# estimates and sample sets ---------------------------------------------------

@pytest.mark.parametrize('samples, expected', list(estimate_params.values()),
                         ids=list(estimate_params.keys()))
def test_estimate_from_samples(samples, expected):
    estimate = MCEstimate.from_samples(samples, seed=3, method='m', measure='P')
    mean, stderr, n_paths, n_invalid = expected
    assert estimate.mean == pytest.approx(mean)
    assert estimate.stderr == pytest.approx(stderr)
    assert (estimate.n_paths, estimate.n_invalid, estimate.seed) == (n_paths, n_invalid, 3)


def test_estimate_errors():
    with pytest.raises(EstimatorError):
        MCEstimate.from_samples([np.nan, np.nan], seed=0)
    with pytest.raises(EstimatorError):
        MCEstimate.from_samples([1.0, np.inf], seed=0)


def test_independent_estimates_combine():
    a = MCEstimate(mean=1.0, stderr=0.3, n_paths=10, seed=0, measure='P')
    b = MCEstimate(mean=0.5, stderr=0.4, n_paths=8, seed=0, measure='Q^0')
    total = a - b
    assert total.mean == 0.5
    assert total.stderr == pytest.approx(0.5)
    assert total.measure == 'P+Q^0'
    assert total.within(0.0, k=1.0)
    assert not total.within(0.0, k=0.5)


def test_sample_sets_pair_paths_within_a_measure():
    x = np.array([1.0, 2.0, 3.0])
    same = SampleSet({'Q^0': x}, seed=0) - SampleSet({'Q^0': x + 1.0}, seed=0)
    estimate = same.estimate()
    assert estimate.mean == -1.0
    assert estimate.stderr == 0.0

    mixed = 2.0 + SampleSet({'P': x}, seed=0) + SampleSet({'Q^1': x}, seed=0)
    estimate = mixed.estimate()
    assert estimate.mean == pytest.approx(6.0)
    one = MCEstimate.from_samples(x, seed=0)
    assert estimate.stderr == pytest.approx(math.hypot(one.stderr, one.stderr))

    # numpy scalars defer to the sample set
    scaled = np.float64(3.0) * SampleSet({'P': x}, seed=0)
    assert isinstance(scaled, SampleSet)
    assert scaled.estimate().mean == pytest.approx(6.0)


def test_method_parse():
    assert Method.parse('qj_put') is Method.QJ_PUT
    assert Method.parse(Method.QI_CALL) is Method.QI_CALL
    with pytest.raises(EstimatorError):
        Method.parse('longstaff')


def test_config_errors_name_the_field():
    with pytest.raises(ConfigError) as e:
        MCConfig(n_paths=0)
    assert e.value.field == 'n_paths'
    with pytest.raises(ConfigError) as e:
        MCConfig(step=0.0)
    assert e.value.field == 'step'
    assert MCConfig(workers=4).simulation_key == MCConfig(workers=1).simulation_key


# bessel references -----------------------------------------------------------

@pytest.mark.parametrize('args, expected', list(bessel_eur_params.values()),
                         ids=list(bessel_eur_params.keys()))
def test_bessel_european(args, expected):
    i, j, method = args
    estimate = eur_exchange(bessel_model(K), i, j, T, method, BESSEL_CONFIG)
    assert estimate.within(expected, k=3.0, allowance=BESSEL_CONFIG.allowance), \
        f'{method.value}: {estimate.mean:.4f} +- {estimate.stderr:.4f}, expected {expected:.4f}'


@pytest.mark.parametrize('i, j', [(0, 1), (1, 0)], ids=['01', '10'])
def test_bessel_european_methods_agree(i, j):
    model = bessel_model(K)
    estimates = [eur_exchange(model, i, j, T, method, BESSEL_CONFIG) for method in Method]
    for a, b in itertools.combinations(estimates, 2):
        tolerance = 3 * math.hypot(a.stderr, b.stderr) + BESSEL_CONFIG.allowance
        assert abs(a.mean - b.mean) <= tolerance, f'{a.method} vs {b.method}'


def test_bessel_american():
    model = bessel_model(K)
    amer_01, _ = amer_exchange(model, 0, 1, T, mc_config=BESSEL_CONFIG)
    amer_10, ladder = amer_exchange(model, 1, 0, T, mc_config=BESSEL_CONFIG)
    allowance = BESSEL_CONFIG.allowance
    assert amer_01.within(bessel.eur_ex_01(K, T), allowance=allowance)
    assert amer_10.within(bessel.amer_ex_10(K, T), allowance=allowance)

    assert len(ladder) == BESSEL_CONFIG.n_max + 1
    assert [e.extras['level'] for e in ladder] == [1, 2, 3, 4, None]
    assert ladder[-1].mean == amer_10.mean


def test_bessel_ladder_is_nondecreasing():
    amer_10, ladder = amer_exchange(bessel_model(K), 1, 0, T, mc_config=DEGENERACY_CONFIG)
    assert [e.extras['level'] for e in ladder[:-1]] == list(range(1, 9))
    # stopping later only adds value before explosion
    for lower, upper in zip(ladder, ladder[1:]):
        assert upper.mean >= lower.mean - 2 * math.hypot(lower.stderr, upper.stderr)
    assert amer_10.within(bessel.amer_ex_10(K, T), allowance=DEGENERACY_CONFIG.allowance)


def test_bessel_early_exercise_premium():
    model = bessel_model(K)
    eep_10 = early_exercise_premium(model, 1, 0, T, BESSEL_CONFIG)
    eep_01 = early_exercise_premium(model, 0, 1, T, BESSEL_CONFIG)
    assert eep_10.within(K * bessel.default_prob_q0(T), allowance=BESSEL_CONFIG.allowance)
    assert eep_01.mean == pytest.approx(0.0, abs=BESSEL_CONFIG.allowance)

    amer_10, _ = amer_exchange(model, 1, 0, T, mc_config=BESSEL_CONFIG)
    eur_10 = eur_exchange(model, 1, 0, T, Method.QJ_PUT, BESSEL_CONFIG)
    assert eep_10.mean == pytest.approx(amer_10.mean - eur_10.mean, abs=1e-12)


def test_bessel_default_probability():
    model = bessel_model(K)
    q0 = default_probability(model, 0, T, BESSEL_CONFIG)
    q1 = default_probability(model, 1, T, BESSEL_CONFIG)
    assert q0.within(bessel.default_prob_q0(T), allowance=BESSEL_CONFIG.allowance)
    # the grid misses crossings, which only lowers the estimate
    assert q0.mean < bessel.default_prob_q0(T) + 3 * q0.stderr
    # only Euler overshoots near zero leave the domain under Q^1
    assert q1.mean < 0.02


@pytest.mark.parametrize('pair', [(1, 0), (0, 1)], ids=['10', '01'])
def test_american_decomposes_pathwise(pair):
    i, j = pair
    model = bessel_model(K)
    limit = ladder_samples(model, i, j, T, BESSEL_CONFIG)[-1]
    eur = eur_samples(model, i, j, T, Method.QJ_PUT, BESSEL_CONFIG)
    eep = eep_samples(model, i, j, T, BESSEL_CONFIG)
    residual = (limit - eur - eep).terms[f'Q^{j}']
    assert np.nanmax(np.abs(residual)) <= 1e-12


@pytest.mark.parametrize('method', list(Method), ids=[m.value for m in Method])
def test_exchanging_an_asset_for_itself_is_worthless(method):
    estimate = eur_exchange(bessel_model(K), 1, 1, T, method, BESSEL_CONFIG)
    assert estimate.mean == 0.0
    assert estimate.stderr == 0.0


def test_halving_the_step_reduces_the_hitting_bias():
    model = bessel_model(K)
    exact = bessel.default_prob_q0(T)

    def bias(step):
        means = [default_probability(model, 0, T,
                                     MCConfig(n_paths=4000, step=step, seed=seed)).mean
                 for seed in (1, 2, 3)]
        return abs(sum(means) / len(means) - exact)

    assert bias(2 ** -6) < bias(2 ** -4)


# geometric brownian references -----------------------------------------------

@pytest.mark.parametrize('method', list(Method), ids=[m.value for m in Method])
@pytest.mark.parametrize('i, j, sigma', list(gbm_pairs.values()), ids=list(gbm_pairs.keys()))
def test_gbm_matches_margrabe(i, j, sigma, method):
    estimate = eur_exchange(gbm_pair_model(), i, j, T, method, GBM_CONFIG)
    assert estimate.within(margrabe_reference(1.0, 1.0, sigma, T), k=3.0, allowance=1e-3)


def test_gbm_american_equals_european():
    model = gbm_pair_model()
    eur = eur_exchange(model, 1, 2, T, Method.QJ_PUT, GBM_CONFIG)
    amer, ladder = amer_exchange(model, 1, 2, T, mc_config=GBM_CONFIG)
    assert amer.mean == eur.mean
    assert all(e.mean == eur.mean for e in ladder)
    assert early_exercise_premium(model, 1, 2, T, GBM_CONFIG).mean == 0.0
    assert default_probability(model, 2, T, GBM_CONFIG).mean == 0.0


def test_ties_are_reported():
    # identical volatilities and prices: S^1 = S^2 on every path
    model = dataclasses.replace(equal_vol_model(), s0=(1.0, 1.0, 1.0))
    estimate = eur_exchange(model, 1, 2, T, Method.PROB_DIFF, GBM_CONFIG)
    assert estimate.mean == 0.0
    assert estimate.extras['tie_frequency'] == 1.0

    call = eur_exchange(bessel_model(K), 1, 0, T, Method.QI_CALL, BESSEL_CONFIG)
    assert call.extras['zero_price_term'] == 0.0


# errors ----------------------------------------------------------------------

def test_estimator_errors():
    model = bessel_model(K)
    with pytest.raises(EstimatorError):
        eur_exchange(model, 0, 1, -1.0, mc_config=GBM_CONFIG)
    with pytest.raises(EstimatorError):
        amer_exchange(bessel_model(K, depth=2), 1, 0, T, mc_config=GBM_CONFIG)
    with pytest.raises(MeasureError):
        eur_exchange(numeraire_adjust(model, 0), 0, 1, T, Method.QJ_PUT, GBM_CONFIG)


def test_estimates_are_reproducible_across_workers():
    model = gbm_pair_model()
    config = MCConfig(n_paths=500, step=0.25, seed=21, chunk_size=100)
    serial = eur_exchange(model, 1, 2, T, Method.QJ_PUT, config)
    threaded = eur_exchange(model, 1, 2, T, Method.QJ_PUT,
                            dataclasses.replace(config, workers=4))
    assert serial == threaded
    other_seed = eur_exchange(model, 1, 2, T, Method.QJ_PUT,
                              dataclasses.replace(config, seed=22))
    assert other_seed.mean != serial.mean
