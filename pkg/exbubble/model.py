"""
Markovian continuous factor models.

A :class:`FactorModel` holds the coefficient functions of

    dX^k    = a^k(X) dt + <b^k(X), dW>
    dS^i/S^i = (r + mu^i)(X) dt + <sigma^i(X), dW>        i = 0..d
    dY/Y    = -r(X) dt - <theta(X), dW>

as parsed expressions, the nested exhaustion of the state space and the
measure the model is to be simulated under: the physical measure P or the
valuation measure Q^j attached to numeraire asset j.
"""
import dataclasses
import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Optional
from typing import Tuple

import numpy as np
import pandas as pd

from exbubble.domains import DomainExhaustion
from exbubble.exceptions import AssetIndexError
from exbubble.exceptions import ExprSyntaxError
from exbubble.exceptions import MeasureError
from exbubble.exceptions import ModelDimensionError
from exbubble.exceptions import ModelError
from exbubble.exceptions import NonFiniteCoefficientError
from exbubble.exceptions import RankDeficiencyError
from exbubble.expr import ExprAst
from exbubble.expr import parse

logger = logging.getLogger(__name__)

TOLERANCE = 1e-10


@dataclass(frozen=True)
class FactorModel:
    x0: Tuple[float, ...]
    drift: Tuple[ExprAst, ...]
    diffusion: Tuple[Tuple[ExprAst, ...], ...]
    short_rate: ExprAst
    excess_return: Tuple[ExprAst, ...]
    volatility: Tuple[Tuple[ExprAst, ...], ...]
    s0: Tuple[float, ...]
    exhaustion: DomainExhaustion
    theta: Optional[Tuple[ExprAst, ...]] = None
    numeraire: Optional[int] = None
    name: str = field(default='model', compare=False)

    def __post_init__(self):
        m, d = self.m, self.d

        if m < 1:
            raise ModelDimensionError('the factor dimension must be positive')
        if len(self.drift) != m:
            raise ModelDimensionError(f'{len(self.drift)} drift entries for m={m}')
        if len(self.diffusion) != m or any(len(row) != m for row in self.diffusion):
            raise ModelDimensionError(f'diffusion must be {m}x{m}')
        if len(self.volatility) != d or any(len(row) != m for row in self.volatility):
            raise ModelDimensionError(f'volatility must be {d}x{m}')
        if len(self.s0) != d + 1:
            raise ModelDimensionError(f'{len(self.s0)} initial prices for {d + 1} assets')
        if self.theta is not None and len(self.theta) != m:
            raise ModelDimensionError(f'{len(self.theta)} theta entries for m={m}')
        if self.exhaustion.dim != m:
            raise ModelDimensionError(f'exhaustion of dimension {self.exhaustion.dim} '
                                      f'for m={m}')

        for ast in self.expressions():
            if ast.dim != m:
                raise ModelDimensionError(f'expression `{ast}` is over {ast.dim} '
                                          f'variables, expected {m}')

        if not all(np.isfinite(s) and s > 0 for s in self.s0):
            raise ModelError(f'initial prices must be finite and positive, got {self.s0}')

    @property
    def m(self):
        return len(self.x0)

    @property
    def d(self):
        return len(self.excess_return)

    @property
    def assets(self):
        return range(self.d + 1)

    @property
    def measure(self):
        if self.numeraire is None:
            return 'P'
        return f'Q^{self.numeraire}'

    @property
    def measure_code(self):
        return 0 if self.numeraire is None else self.numeraire + 1

    def expressions(self):
        yield from self.drift
        for row in self.diffusion:
            yield from row
        yield self.short_rate
        yield from self.excess_return
        for row in self.volatility:
            yield from row
        if self.theta is not None:
            yield from self.theta

    def check_asset(self, i):
        if not isinstance(i, (int, np.integer)) or not 0 <= i <= self.d:
            raise AssetIndexError(f'asset index {i!r} outside 0..{self.d}')
        return int(i)

    def coefficients(self, states, strict=False):
        """Evaluate every coefficient at the columns of ``states``.

        Under Q^j the factor drift is a^k + <b^k, sigma^j - theta> and the
        asset rates are r + <sigma^i, sigma^j>; under P the rates are r + mu^i.
        With ``strict`` the first failing state raises instead of being masked.
        """
        X = np.asarray(states, dtype=float).reshape(self.m, -1)
        m, d, p = self.m, self.d, X.shape[1]
        invalid = np.zeros(p, dtype=bool)
        errors = []

        def ev(ast):
            values, bad, error = ast.evaluate_many(X)
            if bad.any():
                invalid[:] |= bad
                errors.append(f'{error[0]} in `{error[1]}`')
            return values

        drift = np.stack([ev(e) for e in self.drift])
        diffusion = np.stack([np.stack([ev(e) for e in row]) for row in self.diffusion])
        short_rate = ev(self.short_rate)

        excess = np.zeros((d + 1, p))
        volatility = np.zeros((d + 1, m, p))
        if d:
            excess[1:] = np.stack([ev(e) for e in self.excess_return])
            volatility[1:] = np.stack([np.stack([ev(e) for e in row])
                                       for row in self.volatility])

        rank_deficient = np.zeros(p, dtype=bool)
        if self.theta is not None:
            theta = np.stack([ev(e) for e in self.theta])
        else:
            theta, rank_deficient = min_norm_theta(volatility[1:], excess[1:], invalid)
            if rank_deficient.any():
                errors.append('volatility matrix is rank deficient')

        if self.numeraire is None:
            asset_rate = short_rate + excess
        else:
            j = self.numeraire
            drift = drift + np.einsum('klp,lp->kp', diffusion, volatility[j] - theta)
            asset_rate = short_rate + np.einsum('imp,mp->ip', volatility, volatility[j])

        coeffs = Coefficients(drift=drift,
                              diffusion=diffusion,
                              short_rate=short_rate,
                              excess_return=excess,
                              volatility=volatility,
                              theta=theta,
                              asset_rate=asset_rate,
                              invalid=invalid | rank_deficient,
                              rank_deficient=rank_deficient,
                              error=errors[0] if errors else None)

        if strict and coeffs.invalid.any():
            state = X[:, coeffs.invalid.argmax()].tolist()
            if rank_deficient.any() and not invalid.any():
                raise RankDeficiencyError(f'volatility rank below {d} at state {state}')
            raise NonFiniteCoefficientError(f'{coeffs.error} at state {state}')
        return coeffs


@dataclass(frozen=True)
class Coefficients:
    drift: np.ndarray
    diffusion: np.ndarray
    short_rate: np.ndarray
    excess_return: np.ndarray
    volatility: np.ndarray
    theta: np.ndarray
    asset_rate: np.ndarray
    invalid: np.ndarray
    rank_deficient: np.ndarray
    error: Optional[str] = None


def min_norm_theta(sigma, mu, skip=None):
    """Minimum-norm solutions of <sigma^i, theta> = mu^i, batched over states.

    ``sigma`` has shape ``(d, m, p)`` and ``mu`` shape ``(d, p)``. Returns
    ``theta`` with shape ``(m, p)`` and the mask of rank-deficient states.
    """
    d, m, p = sigma.shape
    if d == 0:
        return np.zeros((m, p)), np.zeros(p, dtype=bool)

    S = np.moveaxis(sigma, 2, 0)
    rhs = mu.T
    if skip is not None:
        S = np.where(skip[:, None, None], 0.0, S)
        rhs = np.where(skip[:, None], 0.0, rhs)
    S = np.nan_to_num(S, nan=0.0, posinf=0.0, neginf=0.0)
    rhs = np.nan_to_num(rhs, nan=0.0, posinf=0.0, neginf=0.0)

    # theta = sigma^T (sigma sigma^T)^{-1} mu
    gram = S @ np.swapaxes(S, 1, 2)
    if d == 1:
        g = gram[:, 0, 0]
        deficient = ~(g > TOLERANCE * np.maximum(1.0, np.abs(S).max(axis=(1, 2)) ** 2))
        y = rhs[:, 0] / np.where(deficient, 1.0, g)
        theta = S[:, 0, :] * y[:, None]
    else:
        eigs = np.linalg.eigvalsh(gram)
        deficient = ~(eigs[:, 0] > TOLERANCE * np.maximum(1.0, eigs[:, -1]))
        gram = np.where(deficient[:, None, None], np.eye(d), gram)
        y = np.linalg.solve(gram, rhs[:, :, None])
        theta = (np.swapaxes(S, 1, 2) @ y)[:, :, 0]

    if skip is not None:
        deficient &= ~skip
    return theta.T, deficient


def solve_theta(model: FactorModel, states=None):
    """Minimum-norm market price of risk at ``states`` (default: x0).

    Returns an array of shape ``(m, k)``; when d = m this is sigma^{-1} mu.
    """
    if states is None:
        states = np.asarray(model.x0, dtype=float).reshape(-1, 1)
    base = dataclasses.replace(model, theta=None, numeraire=None)
    coeffs = base.coefficients(states, strict=True)
    return coeffs.theta


def numeraire_adjust(model: FactorModel, j: int) -> FactorModel:
    if model.numeraire is not None:
        raise MeasureError(f'model is already under {model.measure}')
    j = model.check_asset(j)
    if model.theta is None:
        solve_theta(model)
    logger.debug('numeraire change of %s to asset %d', model.name, j)
    return dataclasses.replace(model, numeraire=j)


@dataclass(frozen=True)
class ValidationReport:
    states: np.ndarray
    sigma_rank: np.ndarray
    c_min_eigenvalue: np.ndarray
    theta_residual: np.ndarray
    tolerance: float = TOLERANCE

    @property
    def passed(self):
        return bool((self.c_min_eigenvalue > self.tolerance).all()
                    and (self.theta_residual < self.tolerance).all())

    def worst(self):
        if self.passed:
            return None
        k_c = int(self.c_min_eigenvalue.argmin())
        k_theta = int(self.theta_residual.argmax())
        c_gap = self.tolerance - self.c_min_eigenvalue[k_c]
        theta_gap = self.theta_residual[k_theta] - self.tolerance
        if theta_gap >= c_gap:
            return ('theta residual', self.states[:, k_theta].tolist(),
                    float(self.theta_residual[k_theta]))
        return ('smallest eigenvalue of c', self.states[:, k_c].tolist(),
                float(self.c_min_eigenvalue[k_c]))

    def to_frame(self):
        df = pd.DataFrame(self.states.T,
                          columns=[f'x{k + 1}' for k in range(self.states.shape[0])])
        df['sigma_rank'] = self.sigma_rank
        df['c_min_eigenvalue'] = self.c_min_eigenvalue
        df['theta_residual'] = self.theta_residual
        return df


def validate(model: FactorModel, sample_states=None, tolerance=TOLERANCE) -> ValidationReport:
    """Check the rank, positivity and compatibility conditions on sample states."""
    if model.d > model.m:
        raise ModelDimensionError(f'{model.d} risky assets exceed the factor '
                                  f'dimension m={model.m}')

    model.exhaustion.check_nested(model.x0)

    if sample_states is None:
        grid = model.exhaustion.sample_states(model.x0)
        grid = np.concatenate([np.asarray(model.x0, dtype=float).reshape(-1, 1), grid],
                              axis=1)
    else:
        grid = np.asarray(sample_states, dtype=float).reshape(model.m, -1)

    base = dataclasses.replace(model, numeraire=None)
    coeffs = base.coefficients(grid)
    if coeffs.invalid.any() and not coeffs.rank_deficient.any():
        state = grid[:, coeffs.invalid.argmax()].tolist()
        raise NonFiniteCoefficientError(f'{coeffs.error} at sample state {state}')

    sigma = np.moveaxis(coeffs.volatility[1:], 2, 0)
    if model.d:
        rank = np.linalg.matrix_rank(sigma)
    else:
        rank = np.zeros(grid.shape[1], dtype=int)
    if (rank < model.d).any() or coeffs.rank_deficient.any():
        bad = (rank < model.d) | coeffs.rank_deficient
        state = grid[:, bad.argmax()].tolist()
        raise RankDeficiencyError(f'volatility rank below {model.d} at sample state {state}')
    if coeffs.invalid.any():
        state = grid[:, coeffs.invalid.argmax()].tolist()
        raise NonFiniteCoefficientError(f'{coeffs.error} at sample state {state}')

    b = np.moveaxis(coeffs.diffusion, 2, 0)
    c = b @ np.swapaxes(b, 1, 2)
    c_min = np.linalg.eigvalsh(c)[:, 0]

    fitted = np.einsum('imp,mp->ip', coeffs.volatility, coeffs.theta)
    residual = np.abs(fitted - coeffs.excess_return).max(axis=0)

    report = ValidationReport(states=grid,
                              sigma_rank=rank,
                              c_min_eigenvalue=c_min,
                              theta_residual=residual,
                              tolerance=tolerance)
    logger.debug('validated %s on %d sample states: passed=%s',
                 model.name, grid.shape[1], report.passed)
    return report


def _parse_vector(sources, m, label):
    parsed = []
    for k, source in enumerate(sources):
        try:
            parsed.append(parse(str(source), m))
        except ExprSyntaxError as e:
            raise ModelError(f'{label}[{k}] `{source}`: {e}') from e
    return tuple(parsed)


def build_model(x0, drift, diffusion, short_rate, excess_return, volatility,
                s0, exhaustion, theta=None, name='model'):
    """Assemble a :class:`FactorModel` from expression strings."""
    m = len(x0)
    return FactorModel(
        x0=tuple(float(v) for v in x0),
        drift=_parse_vector(drift, m, 'drift'),
        diffusion=tuple(_parse_vector(row, m, f'diffusion[{k}]')
                        for k, row in enumerate(diffusion)),
        short_rate=parse(str(short_rate), m),
        excess_return=_parse_vector(excess_return, m, 'excess_return'),
        volatility=tuple(_parse_vector(row, m, f'volatility[{k}]')
                         for k, row in enumerate(volatility)),
        s0=tuple(float(v) for v in s0),
        exhaustion=exhaustion,
        theta=None if theta is None else _parse_vector(theta, m, 'theta'),
        name=name)
