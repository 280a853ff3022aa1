import math

import pytest

from exbubble import bessel
from exbubble.exceptions import ConfigError
from exbubble.presets import ModelPreset
from exbubble.presets import get_preset
from exbubble.presets import gbm_pair_model
from exbubble.presets import margrabe
from exbubble.presets import presets

from exbubble.tests.data import margrabe_reference

SIGMA_REL = math.sqrt(0.2 ** 2 + 0.3 ** 2 - 2 * 0.5 * 0.2 * 0.3)

# Test Parameters
bessel_reference_params = {
    'eur_01': (('eur', 0, 1), bessel.eur_ex_01(2.0, 1.0)),
    'eur_10': (('eur', 1, 0), bessel.eur_ex_10(2.0, 1.0)),
    'eur_same_asset': (('eur', 1, 1), 0.0),
    'amer_10': (('amer', 1, 0), bessel.amer_ex_10(2.0, 1.0)),
    'eep_10': (('eep', 1, 0), 2.0 * bessel.default_prob_q0(1.0)),
    'eep_01': (('eep', 0, 1), 0.0),
    'default_q0': (('default_prob', 1, 0), bessel.default_prob_q0(1.0)),
    'default_q1': (('default_prob', 0, 1), 0.0),
    'bubble_constant_asset': (('bubble', 0, 0), 2.0 * bessel.default_prob_q0(1.0)),
    'bubble_factor_asset': (('bubble', 1, 1), 0.0),
    'supermartingale_01': (('supermartingale', 0, 1), bessel.ratio_mean_q1(2.0, 1.0)),
    'supermartingale_10': (('supermartingale', 1, 0), None),
    'no_closed_form': (('degeneracy', 0, 1), None),
}

margrabe_params = {
    'risky_pair': (((0.2, 0.0), (0.15, 0.3 * math.sqrt(0.75))), SIGMA_REL),
    'against_bank_account': (((0.0, 0.0), (0.2, 0.0)), 0.2),
}


def test_registry():
    assert set(presets) >= {'bessel', 'gbm'}
    for name, preset in presets.items():
        assert isinstance(preset, ModelPreset)
        assert preset.name == name
        assert preset.description


def test_unknown_preset():
    with pytest.raises(ConfigError) as e:
        get_preset('heston')
    assert e.value.field == 'preset'
    assert 'bessel' in str(e.value)


def test_build_with_bad_parameters():
    with pytest.raises(ConfigError) as e:
        get_preset('bessel').build(K=1.0, strike=2.0)
    assert e.value.field == 'model'


@pytest.mark.parametrize('args, expected', list(bessel_reference_params.values()),
                         ids=list(bessel_reference_params.keys()))
def test_bessel_references(args, expected):
    preset = get_preset('bessel')
    model = preset.build(K=2.0)
    task, i, j = args
    value = preset.reference(task, model, i, j, 1.0)
    if expected is None:
        assert value is None
    else:
        assert value == pytest.approx(expected)


@pytest.mark.parametrize('vols, sigma', list(margrabe_params.values()),
                         ids=list(margrabe_params.keys()))
def test_margrabe(vols, sigma):
    vol_i, vol_j = vols
    assert margrabe(1.0, 1.2, vol_i, vol_j, 2.0) == pytest.approx(
        margrabe_reference(1.0, 1.2, sigma, 2.0))


def test_margrabe_unit_exchange():
    assert margrabe(1.0, 1.0, (0.2, 0.0), (0.15, 0.3 * math.sqrt(0.75)), 1.0) == \
        pytest.approx(0.10524, abs=1e-5)


def test_margrabe_without_relative_volatility_is_intrinsic():
    assert margrabe(1.0, 1.5, (0.2, 0.1), (0.2, 0.1), 1.0) == 0.5
    assert margrabe(1.5, 1.0, (0.0,), (0.0,), 1.0) == 0.0


def test_gbm_references_use_the_model_volatilities():
    preset = get_preset('gbm')
    model = preset.build(vols=(0.2, 0.3), correlation=0.5)
    assert preset.reference('eur', model, 1, 2, 1.0) == pytest.approx(
        margrabe_reference(1.0, 1.0, SIGMA_REL, 1.0))
    assert preset.reference('amer', model, 1, 0, 1.0) == pytest.approx(
        margrabe_reference(1.0, 1.0, 0.2, 1.0))
    assert preset.reference('eep', model, 1, 2, 1.0) == 0.0
    assert preset.reference('supermartingale', model, 1, 2, 1.0) is None


def test_gbm_pair_model():
    model = gbm_pair_model(s0=(1.0, 2.0, 3.0), rate=0.02)
    assert model.s0 == (1.0, 2.0, 3.0)
    assert (model.m, model.d) == (2, 2)
    with pytest.raises(ConfigError) as e:
        gbm_pair_model(correlation=1.0)
    assert e.value.field == 'correlation'
