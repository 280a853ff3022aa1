"""
Config files for pricing runs.

Configs are YAML documents (JSON is accepted as well)::

    model:
      preset: bessel
      K: 1.0
    pair: [0, 1]
    maturities: [0.25, 1, 4]
    monte_carlo:
      n_paths: 200000
      step: 0.0009765625
      seed: 7
    tasks: [eur, parity_eur]
    output:
      path: results.csv
      format: csv

An inline model replaces ``preset`` by ``x0``, ``drift``, ``diffusion``,
``short_rate``, ``excess_return``, ``volatility``, optional ``theta``, ``s0``
and ``exhaustion: {depth, lower, upper}``; every coefficient is an
expression string and exhaustion bounds are expressions in ``n``.
"""
import logging
import math
from dataclasses import dataclass
from dataclasses import fields
from os import path
from typing import Optional
from typing import Tuple

import yaml

from exbubble.domains import BoxExhaustion
from exbubble.exceptions import ConfigError
from exbubble.exceptions import ExprError
from exbubble.exceptions import ModelValidationError
from exbubble.expr import parse
from exbubble.model import FactorModel
from exbubble.model import validate
from exbubble.presets import ModelPreset
from exbubble.presets import get_preset
from exbubble.pricing import MCConfig
from exbubble.pricing import Method

logger = logging.getLogger(__name__)

ESTIMATE_TASKS = ('eur', 'amer', 'eep', 'default_prob')
REPORT_TASKS = ('parity_eur', 'parity_amer', 'parity_mixed', 'supermartingale',
                'bubble', 'degeneracy', 'measure_change', 'american_gap')
TASKS = ESTIMATE_TASKS + REPORT_TASKS
PARITY_TASKS = ('parity_eur', 'parity_amer', 'parity_mixed')
MIN_PARITY_PATHS = 1000
FORMATS = ('csv', 'json')


@dataclass(frozen=True)
class PricingRequest:
    model: FactorModel
    pair: Tuple[int, int]
    maturities: Tuple[float, ...]
    config: MCConfig
    tasks: Tuple[str, ...]
    method: Method = Method.QJ_PUT
    preset: Optional[ModelPreset] = None
    output: Optional[str] = None
    format: str = 'csv'


def _require(mapping, key, field):
    if not isinstance(mapping, dict) or key not in mapping or mapping[key] is None:
        raise ConfigError('missing required field', field)
    return mapping[key]


def _expression(source, m, field, names=None):
    if source is None:
        return None
    try:
        return parse(str(source), m, names=names)
    except ExprError as e:
        raise ConfigError(str(e), field) from e


def _vector(raw, m, field):
    if not isinstance(raw, (list, tuple)):
        raise ConfigError('expected a list of expressions', field)
    return tuple(_expression(s, m, f'{field}[{k}]') for k, s in enumerate(raw))


def _matrix(raw, m, field):
    if not isinstance(raw, (list, tuple)):
        raise ConfigError('expected a list of rows', field)
    return tuple(_vector(row, m, f'{field}[{k}]') for k, row in enumerate(raw))


def _floats(raw, field):
    try:
        return tuple(float(v) for v in raw)
    except (TypeError, ValueError):
        raise ConfigError(f'expected a list of numbers, got {raw!r}', field)


def _exhaustion(raw, m):
    depth = int(_require(raw, 'depth', 'model.exhaustion.depth'))
    lower = raw.get('lower', [None] * m)
    upper = raw.get('upper', [None] * m)
    if len(lower) != m or len(upper) != m:
        raise ConfigError(f'expected {m} lower and upper bounds', 'model.exhaustion')
    return BoxExhaustion(
        lower=tuple(_expression(s, 1, f'model.exhaustion.lower[{k}]', ('n',))
                    for k, s in enumerate(lower)),
        upper=tuple(_expression(s, 1, f'model.exhaustion.upper[{k}]', ('n',))
                    for k, s in enumerate(upper)),
        depth=depth)


def model_from_dict(raw) -> Tuple[FactorModel, Optional[ModelPreset]]:
    """Build the model described by the ``model`` section of a config."""
    if not isinstance(raw, dict):
        raise ConfigError('expected a mapping', 'model')

    if 'preset' in raw:
        params = {k: v for k, v in raw.items() if k != 'preset'}
        preset = get_preset(raw['preset'])
        return preset.build(**params), preset

    x0 = _floats(_require(raw, 'x0', 'model.x0'), 'model.x0')
    m = len(x0)
    theta = raw.get('theta')
    model = FactorModel(
        x0=x0,
        drift=_vector(_require(raw, 'drift', 'model.drift'), m, 'model.drift'),
        diffusion=_matrix(_require(raw, 'diffusion', 'model.diffusion'), m,
                          'model.diffusion'),
        short_rate=_expression(_require(raw, 'short_rate', 'model.short_rate'), m,
                               'model.short_rate'),
        excess_return=_vector(raw.get('excess_return', []), m, 'model.excess_return'),
        volatility=_matrix(raw.get('volatility', []), m, 'model.volatility'),
        theta=None if theta is None else _vector(theta, m, 'model.theta'),
        s0=_floats(_require(raw, 's0', 'model.s0'), 'model.s0'),
        exhaustion=_exhaustion(_require(raw, 'exhaustion', 'model.exhaustion'), m),
        name=str(raw.get('name', 'inline')))
    return model, None


def _monte_carlo(raw, seed=None, workers=None):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError('expected a mapping', 'monte_carlo')
    known = {f.name for f in fields(MCConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f'unknown settings {sorted(unknown)}', 'monte_carlo')

    settings = dict(raw)
    if seed is not None:
        settings['seed'] = seed
    if workers is not None:
        settings['workers'] = workers
    if settings.get('seed') is None:
        raise ConfigError('missing required field', 'monte_carlo.seed')
    try:
        return MCConfig(**{k: (float(v) if k in ('step', 'max_invalid_fraction',
                                                  'allowance') else int(v))
                           for k, v in settings.items()})
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e), 'monte_carlo')


def request_from_dict(raw, seed=None, workers=None) -> PricingRequest:
    if not isinstance(raw, dict):
        raise ConfigError('expected a mapping at the top level', 'config')

    model, preset = model_from_dict(_require(raw, 'model', 'model'))
    report = validate(model)
    if not report.passed:
        what, state, value = report.worst()
        raise ModelValidationError(f'model {model.name} fails validation: {what} '
                                   f'{value:.3g} at state {state}')

    pair = _require(raw, 'pair', 'pair')
    if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
        raise ConfigError(f'expected two asset indices, got {pair!r}', 'pair')
    i, j = (model.check_asset(int(k)) for k in pair)

    maturities = _floats(_require(raw, 'maturities', 'maturities'), 'maturities')
    if not maturities:
        raise ConfigError('at least one maturity is needed', 'maturities')
    if any(not (math.isfinite(t) and t > 0) for t in maturities):
        raise ConfigError(f'must be finite and positive, got {maturities}', 'maturities')
    if any(b <= a for a, b in zip(maturities, maturities[1:])):
        raise ConfigError(f'must be increasing, got {maturities}', 'maturities')

    config = _monte_carlo(raw.get('monte_carlo'), seed, workers)

    tasks = tuple(_require(raw, 'tasks', 'tasks'))
    unknown = [t for t in tasks if t not in TASKS]
    if unknown:
        raise ConfigError(f'unknown tasks {unknown}, expected a subset of {list(TASKS)}',
                          'tasks')
    if any(t in PARITY_TASKS for t in tasks) and config.n_paths < MIN_PARITY_PATHS:
        raise ConfigError(f'parity tasks need at least {MIN_PARITY_PATHS} paths, '
                          f'got {config.n_paths}', 'monte_carlo.n_paths')

    output = raw.get('output') or {}
    if not isinstance(output, dict):
        raise ConfigError(f'expected a mapping, got {output!r}', 'output')
    fmt = output.get('format', 'csv')
    if fmt not in FORMATS:
        raise ConfigError(f'expected one of {list(FORMATS)}, got {fmt!r}', 'output.format')

    return PricingRequest(model=model,
                          pair=(i, j),
                          maturities=maturities,
                          config=config,
                          tasks=tasks,
                          method=Method.parse(raw.get('method', Method.QJ_PUT)),
                          preset=preset,
                          output=output.get('path'),
                          format=fmt)


def load_config(filepath: str, seed=None, workers=None) -> PricingRequest:
    """Read and validate a config file; ``seed`` and ``workers`` override it."""
    if not path.exists(filepath):
        raise ConfigError(f'no such file {filepath!r}', 'config')
    with open(filepath) as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f'cannot parse {filepath!r}: {e}', 'config') from e
    request = request_from_dict(raw, seed=seed, workers=workers)
    logger.debug('loaded %s: model %s, tasks %s', filepath, request.model.name,
                 ', '.join(request.tasks))
    return request
