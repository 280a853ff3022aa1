"""
Monte Carlo estimators for exchange options.

EX^{ij}(T) is the European option to exchange asset i for asset j at T, with
payoff (S^j_T - S^i_T)_+ on {T < ζ}; AX^{ij}(T) is its American counterpart.
Every estimator is built from per-path samples drawn under one or more
measures (P or Q^j). Samples of the same measure share their paths, so sums
and differences of estimators are paired path by path.
"""
import logging
import math
from dataclasses import dataclass
from dataclasses import field
from enum import Enum
from functools import lru_cache
from typing import Dict
from typing import Optional

import numpy as np

from exbubble.engine import batch_simulate
from exbubble.exceptions import ConfigError
from exbubble.exceptions import EstimatorError
from exbubble.exceptions import MeasureError
from exbubble.model import FactorModel
from exbubble.model import numeraire_adjust

logger = logging.getLogger(__name__)


class Method(str, Enum):
    P_DEFLATED = 'P_DEFLATED'
    QJ_PUT = 'QJ_PUT'
    PROB_DIFF = 'PROB_DIFF'
    QI_CALL = 'QI_CALL'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            options = ', '.join(m.value for m in cls)
            raise EstimatorError(f'unknown method {value!r}, expected one of {options}')


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = 200_000
    step: float = 2 ** -10
    seed: int = 0
    n_max: int = 8
    workers: int = 1
    chunk_size: int = 16384
    max_invalid_fraction: float = 1e-3
    allowance: float = 5e-3

    def __post_init__(self):
        if self.n_paths < 1:
            raise ConfigError(f'must be at least 1, got {self.n_paths}', 'n_paths')
        if not self.step > 0:
            raise ConfigError(f'must be positive, got {self.step}', 'step')
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f'must be a 64-bit unsigned integer, got {self.seed}', 'seed')
        if self.n_max < 1:
            raise ConfigError(f'must be at least 1, got {self.n_max}', 'n_max')
        if self.workers < 1:
            raise ConfigError(f'must be at least 1, got {self.workers}', 'workers')
        if self.chunk_size < 1:
            raise ConfigError(f'must be at least 1, got {self.chunk_size}', 'chunk_size')
        if not 0 <= self.max_invalid_fraction < 1:
            raise ConfigError(f'must lie in [0, 1), got {self.max_invalid_fraction}',
                              'max_invalid_fraction')
        if self.allowance < 0:
            raise ConfigError(f'must be non-negative, got {self.allowance}', 'allowance')

    @property
    def simulation_key(self):
        # the worker count never changes a simulated path
        return (self.n_paths, self.step, self.seed, self.chunk_size,
                self.max_invalid_fraction)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int
    method: str = ''
    measure: str = ''
    n_invalid: int = 0
    extras: Dict = field(default_factory=dict, compare=False, hash=False)

    @classmethod
    def from_samples(cls, samples, seed, method='', measure=''):
        samples = np.asarray(samples, dtype=float).reshape(-1)
        ok = ~np.isnan(samples)
        n = int(ok.sum())
        if n == 0:
            raise EstimatorError(f'no valid samples for {method or "estimate"}')
        values = samples[ok]
        mean = math.fsum(values) / n
        if n > 1:
            variance = math.fsum((values - mean) ** 2) / (n - 1)
            stderr = math.sqrt(variance / n)
        else:
            stderr = 0.0
        if not (math.isfinite(mean) and math.isfinite(stderr)):
            raise EstimatorError(f'non-finite estimate for {method or "estimate"}')
        return cls(mean=mean, stderr=stderr, n_paths=n, seed=seed, method=method,
                   measure=measure, n_invalid=samples.size - n)

    def _combine(self, other, sign):
        if not isinstance(other, MCEstimate):
            return NotImplemented
        measure = self.measure if self.measure == other.measure else \
            '+'.join(sorted({self.measure, other.measure}))
        return MCEstimate(mean=self.mean + sign * other.mean,
                          stderr=math.hypot(self.stderr, other.stderr),
                          n_paths=min(self.n_paths, other.n_paths),
                          seed=self.seed,
                          method=self.method,
                          measure=measure,
                          n_invalid=max(self.n_invalid, other.n_invalid))

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def within(self, reference, k=3.0, allowance=0.0):
        return abs(self.mean - reference) <= k * self.stderr + allowance


@dataclass(frozen=True)
class RatioSample:
    """R^{ij} = (S^i / S^j) 1{S^j > 0} per path and its value just before explosion."""

    value: np.ndarray
    rho_value: np.ndarray


class SampleSet:
    """Per-path contributions keyed by the measure they were drawn under.

    The estimate is the sum over measures of the per-measure means; its
    standard error combines the independent per-measure errors.
    """

    # numpy scalars defer to the reflected operators
    __array_ufunc__ = None

    def __init__(self, terms, seed):
        self.terms = {k: np.asarray(v, dtype=float) for k, v in terms.items()}
        self.seed = seed

    def __add__(self, other):
        if isinstance(other, (int, float)):
            key = sorted(self.terms)[0]
            terms = dict(self.terms)
            terms[key] = terms[key] + other
            return SampleSet(terms, self.seed)
        terms = dict(self.terms)
        for key, values in other.terms.items():
            terms[key] = terms[key] + values if key in terms else values
        return SampleSet(terms, self.seed)

    __radd__ = __add__

    def __mul__(self, scale):
        return SampleSet({k: v * scale for k, v in self.terms.items()}, self.seed)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def estimate(self, method=''):
        parts = [MCEstimate.from_samples(self.terms[k], self.seed, method, k)
                 for k in sorted(self.terms)]
        total = parts[0]
        for part in parts[1:]:
            total = total + part
        estimate = MCEstimate(mean=total.mean, stderr=total.stderr,
                              n_paths=total.n_paths, seed=self.seed, method=method,
                              measure=total.measure, n_invalid=total.n_invalid)
        if estimate.mean and estimate.stderr > 0.25 * abs(estimate.mean):
            logger.warning('%s: standard error %.3g is large against the mean %.3g',
                           method or 'estimate', estimate.stderr, estimate.mean)
        return estimate


# simulation access -----------------------------------------------------------

def measure_tag(j):
    return 'P' if j is None else f'Q^{j}'


def under(model: FactorModel, j: Optional[int]) -> FactorModel:
    if model.numeraire == j:
        return model
    if model.numeraire is None:
        return numeraire_adjust(model, j)
    raise MeasureError(f'an estimator needs {measure_tag(j)} but the model is '
                       f'under {model.measure}')


@lru_cache(maxsize=32)
def _cached_summary(model, horizon, observe, levels, simulation_key, workers):
    n_paths, step, seed, chunk_size, max_invalid = simulation_key
    return batch_simulate(model, horizon, step, n_paths, seed, workers=workers,
                          observe=observe, levels=levels, chunk_size=chunk_size,
                          max_invalid_fraction=max_invalid)


def clear_cache():
    _cached_summary.cache_clear()


def summary(model, j, T, config: MCConfig, observe=None, levels=None):
    observe = (float(T),) if observe is None else tuple(float(t) for t in observe)
    if levels is None:
        levels = range(1, config.n_max + 1)
    levels = tuple(int(n) for n in levels)
    if levels and max(levels) > model.exhaustion.depth:
        raise EstimatorError(f'n_max={max(levels)} exceeds the exhaustion depth '
                             f'{model.exhaustion.depth}')
    law = under(model, j)
    result = _cached_summary(law, max(observe), observe, levels,
                             config.simulation_key, config.workers)
    return result


def check_maturity(T):
    if not (isinstance(T, (int, float, np.floating)) and math.isfinite(T) and T > 0):
        raise EstimatorError(f'maturity must be finite and positive, got {T!r}')
    return float(T)


def ratio(Si, Sj):
    """(S^i / S^j) 1{S^j > 0}, NaN where either price is missing."""
    missing = np.isnan(Si) | np.isnan(Sj)
    positive = Sj > 0
    with np.errstate(all='ignore'):
        value = np.where(positive, Si / np.where(positive, Sj, 1.0), 0.0)
    return np.where(missing, np.nan, value)


def _masked(s, values):
    return np.where(s['valid'].values, values, np.nan)


def _prices(s, T, asset, variable='S_obs'):
    return s[variable].sel(obs=T, asset=asset).values


def ratio_sample(model, i, j, T, config: MCConfig) -> RatioSample:
    s = summary(model, j, T, config)
    value = ratio(_prices(s, T, i), _prices(s, T, j))
    pre = ratio(_prices(s, T, i, 'S_pre'), _prices(s, T, j, 'S_pre'))
    exploded = ~s['alive'].sel(obs=T).values
    return RatioSample(value=_masked(s, value),
                       rho_value=_masked(s, np.where(exploded, pre, np.nan)))


# per-path samples ------------------------------------------------------------

def survival_samples(model, j, T, config):
    s = summary(model, j, T, config)
    alive = s['alive'].sel(obs=T).values.astype(float)
    return SampleSet({measure_tag(j): _masked(s, alive)}, config.seed)


def deflated_samples(model, i, T, config):
    s = summary(model, None, T, config)
    alive = s['alive'].sel(obs=T).values
    values = s['Y_obs'].sel(obs=T).values * _prices(s, T, i) * alive
    return SampleSet({'P': _masked(s, values)}, config.seed)


def frequency_samples(model, measure, i, j, T, config, strict=True):
    """Samples of 1{S^i_T < S^j_T, T < ζ} (``<=`` unless strict) under Q^measure."""
    s = summary(model, measure, T, config)
    Si, Sj = _prices(s, T, i), _prices(s, T, j)
    hit = (Si < Sj) if strict else (Si <= Sj)
    values = (hit & s['alive'].sel(obs=T).values).astype(float)
    return SampleSet({measure_tag(measure): _masked(s, values)}, config.seed)


def eur_samples(model, i, j, T, method, config):
    i, j = model.check_asset(i), model.check_asset(j)
    method = Method.parse(method)
    s0 = model.s0

    if method is Method.P_DEFLATED:
        s = summary(model, None, T, config)
        payoff = np.maximum(_prices(s, T, j) - _prices(s, T, i), 0.0)
        values = s['Y_obs'].sel(obs=T).values * payoff * s['alive'].sel(obs=T).values
        return SampleSet({'P': _masked(s, values)}, config.seed)

    if method is Method.QJ_PUT:
        s = summary(model, j, T, config)
        R = ratio(_prices(s, T, i), _prices(s, T, j))
        values = s0[j] * np.maximum(1.0 - R, 0.0) * s['alive'].sel(obs=T).values
        return SampleSet({measure_tag(j): _masked(s, values)}, config.seed)

    if method is Method.PROB_DIFF:
        return (s0[j] * frequency_samples(model, j, i, j, T, config)
                - s0[i] * frequency_samples(model, i, i, j, T, config))

    s = summary(model, i, T, config)
    R = ratio(_prices(s, T, j), _prices(s, T, i))
    values = s0[i] * np.maximum(R - 1.0, 0.0) * s['alive'].sel(obs=T).values
    call = SampleSet({measure_tag(i): _masked(s, values)}, config.seed)
    return call + s0[j] * _zero_price_samples(model, i, j, T, config)


def _zero_price_samples(model, i, j, T, config):
    s = summary(model, j, T, config)
    values = (_prices(s, T, i) == 0) & s['alive'].sel(obs=T).values
    return SampleSet({measure_tag(j): _masked(s, values.astype(float))}, config.seed)


def ladder_samples(model, i, j, T, config, n_max=None):
    """Samples of S^j_0 (1 - R^{ij})_+ at T∧ζ_n for n = 1..n_max, then at T∧(ζ-)."""
    i, j = model.check_asset(i), model.check_asset(j)
    n_max = config.n_max if n_max is None else int(n_max)
    levels = range(1, n_max + 1)
    s = summary(model, j, T, config, levels=levels)
    tag = measure_tag(j)

    ladder = []
    for n in levels:
        stopped = s['S_stop'].sel(obs=T, level=n)
        R = ratio(stopped.sel(asset=i).values, stopped.sel(asset=j).values)
        values = model.s0[j] * np.maximum(1.0 - R, 0.0)
        ladder.append(SampleSet({tag: _masked(s, values)}, config.seed))

    R = ratio(_prices(s, T, i, 'S_pre'), _prices(s, T, j, 'S_pre'))
    values = model.s0[j] * np.maximum(1.0 - R, 0.0)
    ladder.append(SampleSet({tag: _masked(s, values)}, config.seed))
    return ladder


def eep_samples(model, i, j, T, config):
    """Samples of S^j_0 (1 - ρ^{ij})_+ 1{ζ <= T} under Q^j."""
    i, j = model.check_asset(i), model.check_asset(j)
    sample = ratio_sample(model, i, j, T, config)
    s = summary(model, j, T, config)
    exploded = ~s['alive'].sel(obs=T).values
    rho = np.where(exploded, sample.rho_value, 0.0)
    values = model.s0[j] * np.maximum(1.0 - rho, 0.0) * exploded
    return SampleSet({measure_tag(j): _masked(s, values)}, config.seed)


# estimators ------------------------------------------------------------------

def _config(mc_config):
    return MCConfig() if mc_config is None else mc_config


def eur_exchange(model: FactorModel, i, j, T, method=Method.QJ_PUT,
                 mc_config: MCConfig = None) -> MCEstimate:
    """European exchange value EX^{ij}(T) by one of four representations.

    ``QI_CALL`` reports its Q^j[S^i_T = 0] term under ``extras['zero_price_term']``
    and ``PROB_DIFF`` the Q^j frequency of ties S^i_T = S^j_T under
    ``extras['tie_frequency']``.
    """
    config = _config(mc_config)
    T = check_maturity(T)
    method = Method.parse(method)
    estimate = eur_samples(model, i, j, T, method, config).estimate(method.value)

    if method is Method.QI_CALL:
        zero = _zero_price_samples(model, i, j, T, config).estimate('zero_price_term')
        estimate.extras['zero_price_term'] = zero.mean
    elif method is Method.PROB_DIFF:
        loose = frequency_samples(model, j, i, j, T, config, strict=False)
        strict = frequency_samples(model, j, i, j, T, config)
        estimate.extras['tie_frequency'] = (loose - strict).estimate().mean

    logger.debug('EX^{%d%d}(%g) by %s = %.6g +- %.3g', i, j, T, method.value,
                 estimate.mean, estimate.stderr)
    return estimate


def amer_exchange(model: FactorModel, i, j, T, n_max=None, mc_config: MCConfig = None):
    """American exchange value AX^{ij}(T) and the ladder EX^{ij}(T∧ζ_n).

    The ladder holds levels 1..n_max and ends with the explosion limit
    T∧(ζ-), whose value is returned as the AX^{ij}(T) estimate.
    """
    config = _config(mc_config)
    T = check_maturity(T)
    samples = ladder_samples(model, i, j, T, config, n_max)
    ladder = []
    for n, sample in enumerate(samples, start=1):
        tag = f'ladder_{n}' if n < len(samples) else 'ladder_limit'
        estimate = sample.estimate(tag)
        estimate.extras['level'] = n if n < len(samples) else None
        ladder.append(estimate)

    last = ladder[-1]
    result = MCEstimate(mean=last.mean, stderr=last.stderr, n_paths=last.n_paths,
                        seed=last.seed, method='AMERICAN', measure=last.measure,
                        n_invalid=last.n_invalid)
    logger.debug('AX^{%d%d}(%g) = %.6g +- %.3g', i, j, T, result.mean, result.stderr)
    return result, ladder


def early_exercise_premium(model: FactorModel, i, j, T,
                           mc_config: MCConfig = None) -> MCEstimate:
    """S^j_0 E_{Q^j}[(1 - ρ^{ij})_+ ; ζ <= T]."""
    config = _config(mc_config)
    T = check_maturity(T)
    return eep_samples(model, i, j, T, config).estimate('EEP')


def default_probability(model: FactorModel, j, T, mc_config: MCConfig = None) -> MCEstimate:
    config = _config(mc_config)
    T = check_maturity(T)
    j = model.check_asset(j)
    return (1.0 - survival_samples(model, j, T, config)).estimate('DEFAULT_PROBABILITY')
