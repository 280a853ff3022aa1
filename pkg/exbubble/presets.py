import math

import numpy as np
from scipy.special import ndtr

from exbubble import bessel
from exbubble.domains import BoxExhaustion
from exbubble.exceptions import ConfigError
from exbubble.model import build_model


class ModelPreset():
    """A named model factory together with its closed-form reference values.

    ``references`` maps a task name to a callable ``(model, i, j, T) -> value``
    or ``None`` when no closed form is known for that pair.
    """

    def __init__(self, name, factory, references=None, description=None):
        if references is None:
            references = {}

        self.name = name
        self.factory = factory
        self.references = references
        self.description = description

    def build(self, **params):
        try:
            return self.factory(**params)
        except TypeError as e:
            raise ConfigError(f'bad parameters for preset {self.name!r}: {e}', 'model')

    def reference(self, task, model, i, j, T):
        func = self.references.get(task)
        if func is None:
            return None
        return func(model, i, j, T)


def gbm_pair_model(vols=(0.2, 0.3), correlation=0.5, s0=(1.0, 1.0, 1.0),
                   rate=0.0, excess_returns=(0.05, 0.08), depth=64):
    """A bank account and two geometric Brownian motions.

    The factors are two Brownian motions on R^2 which never leave the
    unbounded exhaustion, so the model neither explodes nor has bubbles.
    """
    sigma_1, sigma_2 = (float(v) for v in vols)
    rho = float(correlation)
    if not -1.0 < rho < 1.0:
        raise ConfigError(f'must lie in (-1, 1), got {rho}', 'correlation')
    root = math.sqrt(1.0 - rho ** 2)
    exhaustion = BoxExhaustion.from_strings(lower=[None, None], upper=[None, None],
                                            depth=depth)
    return build_model(x0=[0.0, 0.0],
                       drift=['0', '0'],
                       diffusion=[['1', '0'], ['0', '1']],
                       short_rate=repr(float(rate)),
                       excess_return=[repr(float(m)) for m in excess_returns],
                       volatility=[[repr(sigma_1), '0'],
                                   [repr(sigma_2 * rho), repr(sigma_2 * root)]],
                       s0=s0,
                       exhaustion=exhaustion,
                       name=f'gbm(vols={sigma_1:g},{sigma_2:g}, corr={rho:g})')


def margrabe(si0, sj0, vol_i, vol_j, T):
    """Value of (S^j_T - S^i_T)_+ for traded log-normal assets.

    ``vol_i`` and ``vol_j`` are the constant volatility vectors, the zero
    vector for a bank account. Interest rates drop out of the value.
    """
    vol = np.asarray(vol_j, dtype=float) - np.asarray(vol_i, dtype=float)
    sigma = float(np.sqrt(vol @ vol))
    if sigma == 0.0:
        return max(sj0 - si0, 0.0)
    d1 = (math.log(sj0 / si0) + 0.5 * sigma ** 2 * T) / (sigma * math.sqrt(T))
    d2 = d1 - sigma * math.sqrt(T)
    return float(sj0 * ndtr(d1) - si0 * ndtr(d2))


def _gbm_exchange(model, i, j, T):
    vols = [np.zeros(model.m)] + [np.array([ast.evaluate(model.x0) for ast in row])
                                  for row in model.volatility]
    return margrabe(model.s0[i], model.s0[j], vols[i], vols[j], T)


def _bessel_default(model, i, j, T):
    if j == 0:
        return bessel.default_prob_q0(T)
    return 0.0


def _bessel_bubble(model, i, j, T):
    return model.s0[0] * bessel.default_prob_q0(T) if i == 0 else 0.0


def _eur_bessel(model, i, j, T):
    if (i, j) == (0, 1):
        return bessel.eur_ex_01(model.s0[0], T)
    if (i, j) == (1, 0):
        return bessel.eur_ex_10(model.s0[0], T)
    return 0.0 if i == j else None


def _amer_bessel(model, i, j, T):
    if (i, j) == (0, 1):
        return bessel.eur_ex_01(model.s0[0], T)
    if (i, j) == (1, 0):
        return bessel.amer_ex_10(model.s0[0], T)
    return 0.0 if i == j else None


def _eep_bessel(model, i, j, T):
    if (i, j) == (1, 0):
        return model.s0[0] * bessel.default_prob_q0(T)
    if (i, j) == (0, 1) or i == j:
        return 0.0
    return None


def _supermartingale_bessel(model, i, j, T):
    if (i, j) == (0, 1):
        return bessel.ratio_mean_q1(model.s0[0], T)
    return None


def bessel_preset():
    return ModelPreset(name='bessel',
                       factory=bessel.bessel_model,
                       references={'eur': _eur_bessel,
                                   'amer': _amer_bessel,
                                   'eep': _eep_bessel,
                                   'default_prob': _bessel_default,
                                   'bubble': _bessel_bubble,
                                   'supermartingale': _supermartingale_bessel},
                       description='Three-dimensional Bessel factor, constant asset K')


def gbm_preset():
    return ModelPreset(name='gbm',
                       factory=gbm_pair_model,
                       references={'eur': _gbm_exchange,
                                   'amer': _gbm_exchange,
                                   'eep': lambda model, i, j, T: 0.0,
                                   'default_prob': lambda model, i, j, T: 0.0,
                                   'bubble': lambda model, i, j, T: 0.0},
                       description='Bank account and two geometric Brownian motions')


def get_user_presets() -> dict:
    return {}


default_presets = {
    'bessel': bessel_preset(),
    'gbm': gbm_preset(),
}

user_presets = get_user_presets()
presets = {**default_presets, **user_presets}


def get_preset(name) -> ModelPreset:
    try:
        return presets[name]
    except KeyError:
        options = ', '.join(sorted(presets))
        raise ConfigError(f'unknown preset {name!r}, expected one of {options}', 'preset')
