"""
Checks of the structural relations between exchange values, bubbles and
explosion on simulated models.

Every check compares Monte Carlo quantities with the fixed rule
``|residual| <= 3 * stderr + allowance``, where the allowance absorbs the
discretization bias of the grid-resolution stopping.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional
from typing import Tuple

import numpy as np
import pandas as pd

from exbubble.exceptions import EstimatorError
from exbubble.exceptions import PreconditionError
from exbubble.pricing import MCConfig
from exbubble.pricing import MCEstimate
from exbubble.pricing import Method
from exbubble.pricing import SampleSet
from exbubble.pricing import check_maturity
from exbubble.pricing import deflated_samples
from exbubble.pricing import eur_samples
from exbubble.pricing import frequency_samples
from exbubble.pricing import ladder_samples
from exbubble.pricing import measure_tag
from exbubble.pricing import ratio
from exbubble.pricing import summary
from exbubble.pricing import survival_samples

logger = logging.getLogger(__name__)

SIGMAS = 3.0
TREND_SIGMAS = 2.0


def _config(mc_config):
    return MCConfig() if mc_config is None else mc_config


def _combined(a: MCEstimate, b: MCEstimate):
    return math.hypot(a.stderr, b.stderr)


def _nonincreasing(estimates, sigmas=TREND_SIGMAS):
    return all(b.mean <= a.mean + sigmas * _combined(a, b)
               for a, b in zip(estimates, estimates[1:]))


def _from_peak(estimates):
    peak = max(range(len(estimates)), key=lambda k: estimates[k].mean)
    return estimates[peak:]


@dataclass(frozen=True)
class ParityReport:
    name: str
    i: int
    j: int
    T: float
    left: MCEstimate
    right: MCEstimate
    residual: float
    stderr: float
    allowance: float

    @property
    def tolerance(self):
        return SIGMAS * self.stderr + self.allowance

    @property
    def passed(self):
        return abs(self.residual) <= self.tolerance

    @classmethod
    def from_samples(cls, name, i, j, T, left: SampleSet, right: SampleSet, allowance):
        difference = (left - right).estimate(name)
        report = cls(name=name, i=i, j=j, T=T,
                     left=left.estimate(f'{name}_left'),
                     right=right.estimate(f'{name}_right'),
                     residual=difference.mean,
                     stderr=difference.stderr,
                     allowance=allowance)
        logger.debug('%s (%d, %d, T=%g): residual %.3g, tolerance %.3g', name, i, j, T,
                     report.residual, report.tolerance)
        return report


@dataclass(frozen=True)
class SupermartingaleReport:
    i: int
    j: int
    times: Tuple[float, ...]
    means: Tuple[MCEstimate, ...]
    initial: float

    @property
    def passed(self):
        return _nonincreasing(self.means)

    def to_frame(self):
        return pd.DataFrame({'time': self.times,
                             'mean': [e.mean for e in self.means],
                             'stderr': [e.stderr for e in self.means]})


@dataclass(frozen=True)
class BubbleReport:
    i: int
    times: Tuple[float, ...]
    defects: Tuple[MCEstimate, ...]
    cross_checks: Tuple[ParityReport, ...]
    allowance: float

    @property
    def flags(self):
        return tuple(d.mean > SIGMAS * d.stderr for d in self.defects)

    @property
    def bubble(self):
        return any(self.flags)

    @property
    def passed(self):
        return all(c.passed for c in self.cross_checks)

    def to_frame(self):
        return pd.DataFrame({'time': self.times,
                             'defect': [d.mean for d in self.defects],
                             'stderr': [d.stderr for d in self.defects],
                             'flagged': self.flags,
                             'cross_check': [c.passed for c in self.cross_checks]})


@dataclass(frozen=True)
class DegeneracyReport:
    i: int
    j: int
    levels: Tuple[int, ...]
    freq_j: Tuple[MCEstimate, ...]
    freq_i: Tuple[MCEstimate, ...]
    ratio_means: Tuple[MCEstimate, ...]
    ratio_drop: MCEstimate
    rho_mass_at_zero: Optional[float]
    stray_fraction: float
    n_exploded: int
    n_valid: int
    condition3: bool
    condition4: bool

    @property
    def passed(self):
        return self.condition3 and self.condition4

    @property
    def monotone(self):
        return all(_nonincreasing(_from_peak(freq)) for freq in (self.freq_j, self.freq_i))

    def to_frame(self):
        return pd.DataFrame({'level': self.levels,
                             'freq_j': [e.mean for e in self.freq_j],
                             'freq_i': [e.mean for e in self.freq_i],
                             'ratio_mean': [e.mean for e in self.ratio_means]})


# ratio and bubbles -----------------------------------------------------------

def check_ratio_supermartingale(model, i, j, time_grid, mc_config: MCConfig = None):
    """E_{Q^j}[R^{ij}_t ; t < ζ] over ``time_grid``; passes iff nonincreasing."""
    config = _config(mc_config)
    i, j = model.check_asset(i), model.check_asset(j)
    times = tuple(check_maturity(t) for t in time_grid)
    if any(b <= a for a, b in zip(times, times[1:])):
        raise EstimatorError(f'times must be increasing, got {times}')

    s = summary(model, j, times[-1], config, observe=times)
    tag = measure_tag(j)
    means = []
    for t in times:
        R = ratio(s['S_obs'].sel(obs=t, asset=i).values,
                  s['S_obs'].sel(obs=t, asset=j).values)
        values = np.where(s['valid'].values, R * s['alive'].sel(obs=t).values, np.nan)
        means.append(SampleSet({tag: values}, config.seed).estimate('supermartingale'))

    return SupermartingaleReport(i=i, j=j, times=times, means=tuple(means),
                                 initial=model.s0[i] / model.s0[j])


def detect_bubble(model, i, T_grid, mc_config: MCConfig = None) -> BubbleReport:
    """Martingale defect S^i_0 - E_P[Y_T S^i_T] per maturity.

    Each defect is cross-checked against S^i_0 Q^i[ζ <= T].
    """
    config = _config(mc_config)
    i = model.check_asset(i)
    times = tuple(check_maturity(t) for t in T_grid)
    observe = tuple(sorted(set(times)))

    p = summary(model, None, observe[-1], config, observe=observe)
    q = summary(model, i, observe[-1], config, observe=observe)
    s0 = model.s0[i]

    defects, checks = [], []
    for T in times:
        deflated = p['Y_obs'].sel(obs=T).values * p['S_obs'].sel(obs=T, asset=i).values
        deflated = np.where(p['valid'].values, deflated * p['alive'].sel(obs=T).values,
                            np.nan)
        defect = s0 - SampleSet({'P': deflated}, config.seed)

        died = np.where(q['valid'].values, ~q['alive'].sel(obs=T).values, np.nan)
        lost = s0 * SampleSet({measure_tag(i): died.astype(float)}, config.seed)

        defects.append(defect.estimate('martingale_defect'))
        checks.append(ParityReport.from_samples('bubble_cross_check', i, i, T,
                                                defect, lost, config.allowance))

    report = BubbleReport(i=i, times=times, defects=tuple(defects),
                          cross_checks=tuple(checks), allowance=config.allowance)
    if report.bubble:
        logger.info('asset %d of %s carries a bubble', i, model.name)
    return report


def check_measure_change(model, j, T, mc_config: MCConfig = None) -> ParityReport:
    """E_P[Y_T S^j_T ; T < ζ] against S^j_0 Q^j[T < ζ]."""
    config = _config(mc_config)
    j = model.check_asset(j)
    T = check_maturity(T)
    left = deflated_samples(model, j, T, config)
    right = model.s0[j] * survival_samples(model, j, T, config)
    return ParityReport.from_samples('measure_change', j, j, T, left, right,
                                     config.allowance)


# degeneracy ------------------------------------------------------------------

def _trending_down(samples, tolerance):
    """The last level is negligible or significantly below the peak level.

    The peak is not always the first level: when x0 sits on the boundary of
    the first exhaustion set, the low levels stop almost immediately.
    """
    estimates = [s.estimate() for s in samples]
    if estimates[-1].mean <= tolerance:
        return True
    peak = max(range(len(estimates)), key=lambda k: estimates[k].mean)
    if peak == len(estimates) - 1:
        return False
    drop = (samples[peak] - samples[-1]).estimate()
    return drop.mean > TREND_SIGMAS * drop.stderr + tolerance


def check_degeneracy(model, i, j, mc_config: MCConfig = None, rho_tol=0.5,
                     mass_tol=0.05, trend_tol=1e-6) -> DegeneracyReport:
    """Evidence for the conditions under which mixed parity holds.

    Condition (3): Q^j[S^j_{ζ_n} <= S^i_{ζ_n}] and Q^i[S^i_{ζ_n} <= S^j_{ζ_n}]
    both trend to zero over the levels. Condition (4): E_{Q^j}[R^{ij}_{ζ_n} ∧ 1]
    trends to zero and, among the exploded Q^j-paths, at least
    ``1 - mass_tol`` have ρ^{ij} <= ``rho_tol``. The mass requirement is
    waived when at most ``mass_tol`` of the valid paths explode. The horizon
    is the largest level, so every cap ζ_n <= n binds.
    """
    config = _config(mc_config)
    i, j = model.check_asset(i), model.check_asset(j)
    levels = tuple(range(1, config.n_max + 1))
    horizon = float(levels[-1])

    sj = summary(model, j, horizon, config, levels=levels)
    si = summary(model, i, horizon, config, levels=levels)

    def stopped(s, n, asset):
        return s['S_stop'].sel(obs=horizon, level=n, asset=asset).values

    def frequency(s, n, a, b, measure):
        values = (stopped(s, n, a) <= stopped(s, n, b)).astype(float)
        values = np.where(s['valid'].values, values, np.nan)
        return SampleSet({measure_tag(measure): values}, config.seed)

    samples_j = [frequency(sj, n, j, i, j) for n in levels]
    samples_i = [frequency(si, n, i, j, i) for n in levels]
    freq_j = tuple(s.estimate('condition3_j') for s in samples_j)
    freq_i = tuple(s.estimate('condition3_i') for s in samples_i)
    condition3 = (_trending_down(samples_j, trend_tol)
                  and _trending_down(samples_i, trend_tol))

    capped = []
    for n in levels:
        R = ratio(stopped(sj, n, i), stopped(sj, n, j))
        values = np.where(sj['valid'].values, np.minimum(R, 1.0), np.nan)
        capped.append(SampleSet({measure_tag(j): values}, config.seed))
    ratio_means = tuple(c.estimate('condition4_ratio') for c in capped)
    drop = (capped[0] - capped[-1]).estimate('condition4_drop')

    valid = sj['valid'].values
    n_valid = max(int(valid.sum()), 1)
    exploded = sj['exploded'].values & valid
    n_exploded = int(exploded.sum())
    rho = ratio(sj['S_rho'].sel(asset=i).values, sj['S_rho'].sel(asset=j).values)
    stray = exploded & (np.nan_to_num(rho, nan=0.0) > rho_tol)
    stray_fraction = float(stray.sum() / n_valid)
    mass = float(1.0 - stray.sum() / n_exploded) if n_exploded else None

    condition4 = _trending_down(capped, trend_tol)
    if n_exploded > mass_tol * n_valid:
        condition4 = condition4 and mass >= 1.0 - mass_tol

    report = DegeneracyReport(i=i, j=j, levels=levels, freq_j=freq_j, freq_i=freq_i,
                              ratio_means=ratio_means, ratio_drop=drop,
                              rho_mass_at_zero=mass, stray_fraction=stray_fraction,
                              n_exploded=n_exploded, n_valid=n_valid,
                              condition3=condition3, condition4=condition4)
    logger.debug('degeneracy (%d, %d): condition3=%s condition4=%s rho mass %s over %d '
                 'exploded', i, j, condition3, condition4, mass, n_exploded)
    return report


def _require_degeneracy(model, i, j, config, name):
    report = check_degeneracy(model, i, j, config)
    if not report.passed:
        raise PreconditionError(f'{name} for ({i}, {j}) needs the degeneracy conditions, '
                                f'which are rejected (condition3={report.condition3}, '
                                f'condition4={report.condition4})')
    return report


# parity ----------------------------------------------------------------------

def _eur(model, i, j, T, config, method):
    return eur_samples(model, i, j, T, method, config)


def _amer(model, i, j, T, config):
    return ladder_samples(model, i, j, T, config)[-1]


def check_parity_european(model, i, j, T, mc_config: MCConfig = None,
                          method=Method.QJ_PUT) -> ParityReport:
    """EX^{ij}(T) + S^i_0 Q^i[T < ζ] = EX^{ji}(T) + S^j_0 Q^j[T < ζ]."""
    config = _config(mc_config)
    i, j = model.check_asset(i), model.check_asset(j)
    T = check_maturity(T)
    s0 = model.s0
    left = _eur(model, i, j, T, config, method) + s0[i] * survival_samples(model, i, T, config)
    right = _eur(model, j, i, T, config, method) + s0[j] * survival_samples(model, j, T, config)
    return ParityReport.from_samples('parity_eur', i, j, T, left, right, config.allowance)


def check_parity_american(model, i, j, T, mc_config: MCConfig = None) -> ParityReport:
    """AX^{ij}(T) + S^i_0 = AX^{ji}(T) + S^j_0."""
    config = _config(mc_config)
    i, j = model.check_asset(i), model.check_asset(j)
    T = check_maturity(T)
    left = _amer(model, i, j, T, config) + model.s0[i]
    right = _amer(model, j, i, T, config) + model.s0[j]
    return ParityReport.from_samples('parity_amer', i, j, T, left, right, config.allowance)


def check_parity_mixed(model, i, j, T, mc_config: MCConfig = None,
                       method=Method.QJ_PUT) -> Tuple[ParityReport, ParityReport]:
    """The two parities mixing European and American options.

    AX^{ij} + S^i_0 Q^i[T < ζ] = EX^{ji} + S^j_0 and
    EX^{ij} + S^i_0 = AX^{ji} + S^j_0 Q^j[T < ζ]. Raises
    :class:`PreconditionError` when the degeneracy conditions are rejected.
    """
    config = _config(mc_config)
    i, j = model.check_asset(i), model.check_asset(j)
    T = check_maturity(T)
    _require_degeneracy(model, i, j, config, 'mixed parity')

    s0 = model.s0
    first = ParityReport.from_samples(
        'parity_mixed_amer_eur', i, j, T,
        _amer(model, i, j, T, config) + s0[i] * survival_samples(model, i, T, config),
        _eur(model, j, i, T, config, method) + s0[j],
        config.allowance)
    second = ParityReport.from_samples(
        'parity_mixed_eur_amer', i, j, T,
        _eur(model, i, j, T, config, method) + s0[i],
        _amer(model, j, i, T, config) + s0[j] * survival_samples(model, j, T, config),
        config.allowance)
    return first, second


def check_american_gap(model, i, j, T, mc_config: MCConfig = None) -> ParityReport:
    """S^j_0 - AX^{ij}(T) against S^j_0 Q^j[S^j_T <= S^i_T, T < ζ] + S^i_0 Q^i[S^i_T < S^j_T, T < ζ].

    Holds when ρ^{ij} vanishes on explosion, so the degeneracy conditions are
    required as for the mixed parities.
    """
    config = _config(mc_config)
    i, j = model.check_asset(i), model.check_asset(j)
    T = check_maturity(T)
    _require_degeneracy(model, i, j, config, 'american gap')

    s0 = model.s0
    left = s0[j] - _amer(model, i, j, T, config)
    right = (s0[j] * frequency_samples(model, j, j, i, T, config, strict=False)
             + s0[i] * frequency_samples(model, i, i, j, T, config))
    return ParityReport.from_samples('american_gap', i, j, T, left, right,
                                     config.allowance)
