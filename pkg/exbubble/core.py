import json
import logging

import numpy as np
import pandas as pd

from exbubble import diagnostics
from exbubble import pricing
from exbubble.exceptions import PreconditionError
from exbubble.io import PricingRequest

logger = logging.getLogger(__name__)

COLUMNS = ['task', 'i', 'j', 'T', 'estimate', 'stderr', 'reference', 'tolerance', 'passed']
SIGNIFICANT_DIGITS = 10


def _reference(request, task, i, j, T):
    if request.preset is None:
        return None
    return request.preset.reference(task, request.model, i, j, T)


def _estimate_row(request, task, i, j, T, estimate):
    reference = _reference(request, task, i, j, T)
    tolerance = None
    if reference is not None:
        tolerance = diagnostics.SIGMAS * estimate.stderr + request.config.allowance
    return dict(task=task, i=i, j=j, T=T, estimate=estimate.mean,
                stderr=estimate.stderr, reference=reference, tolerance=tolerance,
                passed=None)


def _parity_row(report: diagnostics.ParityReport, task=None):
    return dict(task=task or report.name, i=report.i, j=report.j, T=report.T,
                estimate=report.residual, stderr=report.stderr, reference=0.0,
                tolerance=report.tolerance, passed=report.passed)


def _skipped_row(task, i, j, T):
    return dict(task=task, i=i, j=j, T=T, estimate=None, stderr=None,
                reference=None, tolerance=None, passed=None)


def _eur(request, i, j):
    for T in request.maturities:
        estimate = pricing.eur_exchange(request.model, i, j, T, request.method,
                                        request.config)
        yield _estimate_row(request, 'eur', i, j, T, estimate)


def _amer(request, i, j):
    for T in request.maturities:
        estimate, ladder = pricing.amer_exchange(request.model, i, j, T,
                                                 mc_config=request.config)
        logger.debug('ladder at T=%g: %s', T, ', '.join(f'{e.mean:.6g}' for e in ladder))
        yield _estimate_row(request, 'amer', i, j, T, estimate)


def _eep(request, i, j):
    for T in request.maturities:
        estimate = pricing.early_exercise_premium(request.model, i, j, T, request.config)
        yield _estimate_row(request, 'eep', i, j, T, estimate)


def _default_prob(request, i, j):
    for T in request.maturities:
        estimate = pricing.default_probability(request.model, j, T, request.config)
        yield _estimate_row(request, 'default_prob', i, j, T, estimate)


def _parity_eur(request, i, j):
    for T in request.maturities:
        yield _parity_row(diagnostics.check_parity_european(
            request.model, i, j, T, request.config, request.method))


def _parity_amer(request, i, j):
    for T in request.maturities:
        yield _parity_row(diagnostics.check_parity_american(
            request.model, i, j, T, request.config))


def _parity_mixed(request, i, j):
    for T in request.maturities:
        try:
            reports = diagnostics.check_parity_mixed(request.model, i, j, T,
                                                     request.config, request.method)
        except PreconditionError as e:
            logger.warning('skipping mixed parity at T=%g: %s', T, e)
            yield _skipped_row('parity_mixed_amer_eur', i, j, T)
            yield _skipped_row('parity_mixed_eur_amer', i, j, T)
            continue
        for report in reports:
            yield _parity_row(report)


def _american_gap(request, i, j):
    for T in request.maturities:
        try:
            report = diagnostics.check_american_gap(request.model, i, j, T,
                                                    request.config)
        except PreconditionError as e:
            logger.warning('skipping american gap at T=%g: %s', T, e)
            yield _skipped_row('american_gap', i, j, T)
            continue
        yield _parity_row(report)


def _measure_change(request, i, j):
    for T in request.maturities:
        yield _parity_row(diagnostics.check_measure_change(request.model, j, T,
                                                           request.config))


def _supermartingale(request, i, j):
    report = diagnostics.check_ratio_supermartingale(request.model, i, j,
                                                     request.maturities, request.config)
    for T, estimate in zip(report.times, report.means):
        row = _estimate_row(request, 'supermartingale', i, j, T, estimate)
        row['passed'] = report.passed
        yield row


def _bubble(request, i, j):
    report = diagnostics.detect_bubble(request.model, i, request.maturities,
                                       request.config)
    for T, defect, check in zip(report.times, report.defects, report.cross_checks):
        row = _estimate_row(request, 'bubble', i, j, T, defect)
        row['passed'] = check.passed
        yield row


def _degeneracy(request, i, j):
    report = diagnostics.check_degeneracy(request.model, i, j, request.config)
    drop = report.ratio_drop
    yield dict(task='degeneracy', i=i, j=j, T=float(report.levels[-1]),
               estimate=drop.mean, stderr=drop.stderr, reference=None,
               tolerance=None, passed=report.passed)


runners = {
    'eur': _eur,
    'amer': _amer,
    'eep': _eep,
    'default_prob': _default_prob,
    'parity_eur': _parity_eur,
    'parity_amer': _parity_amer,
    'parity_mixed': _parity_mixed,
    'supermartingale': _supermartingale,
    'bubble': _bubble,
    'degeneracy': _degeneracy,
    'measure_change': _measure_change,
    'american_gap': _american_gap,
}


def run(request: PricingRequest) -> pd.DataFrame:
    """One row per task and maturity, in task order."""
    i, j = request.pair
    rows = []
    for task in request.tasks:
        logger.info('running %s for pair (%d, %d)', task, i, j)
        rows.extend(runners[task](request, i, j))
    return pd.DataFrame(rows, columns=COLUMNS)


def all_passed(results: pd.DataFrame) -> bool:
    flags = results['passed'].dropna()
    return bool(flags.astype(bool).all())


def _format(value):
    if isinstance(value, np.generic):
        value = value.item()
    if value is None or (isinstance(value, float) and value != value):
        return None
    if isinstance(value, bool):
        return value
    if isinstance(value, float):
        return float(f'{value:.{SIGNIFICANT_DIGITS}g}')
    return value


def render(results: pd.DataFrame, fmt='csv') -> str:
    """CSV or JSON text with numbers at ten significant digits."""
    if fmt == 'csv':
        return results.to_csv(index=False, float_format=f'%.{SIGNIFICANT_DIGITS}g')
    records = [{k: _format(v) for k, v in row.items()}
               for row in results.astype(object).to_dict(orient='records')]
    return json.dumps(records, indent=2) + '\n'
