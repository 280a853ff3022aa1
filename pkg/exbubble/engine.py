"""
Path simulation of (X, S, Y) on a uniform time grid.

Paths are simulated in bundles, vectorised across paths with a loop over
time steps. Every path draws its normals from its own Philox stream keyed by
the master seed, the measure and the path index, so the bundle layout and the
worker count never change a path.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import xarray as xr

from exbubble.exceptions import InvalidPathError
from exbubble.exceptions import SimulationError
from exbubble.model import FactorModel

logger = logging.getLogger(__name__)

MAX_PATH_INDEX = 2 ** 48

# normals are drawn this many steps at a time
BLOCK_STEPS = 256


@dataclass(frozen=True)
class RngContract:
    seed: int
    measure_code: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise SimulationError(f'master seed must be a 64-bit unsigned integer, '
                                  f'got {self.seed}')
        if not 0 <= self.measure_code < 2 ** 16:
            raise SimulationError(f'measure code {self.measure_code} out of range')

    def key(self, k):
        if not 0 <= k < MAX_PATH_INDEX:
            raise SimulationError(f'path index {k} out of range')
        return (self.seed << 64) | (self.measure_code << 48) | int(k)

    def generator(self, k):
        return np.random.Generator(np.random.Philox(key=self.key(k)))

    def normals(self, paths, steps, m):
        return NormalStream(self, paths, m).take(steps)


class NormalStream:
    """Consecutive blocks of normals for a bundle of paths.

    Successive ``take`` calls continue each path's stream, so drawing a
    horizon in blocks gives the same numbers as drawing it at once.
    """

    def __init__(self, rng: RngContract, paths, m):
        self.generators = [rng.generator(k) for k in paths]
        self.m = m

    def take(self, steps):
        buffer = np.empty((len(self.generators), steps, self.m))
        for column, generator in enumerate(self.generators):
            generator.standard_normal(out=buffer[column])
        return buffer.transpose(1, 2, 0)


def time_index(t, h):
    steps = t / h
    index = int(round(steps))
    if index < 0 or abs(steps - index) > 1e-9 * max(1.0, steps):
        raise SimulationError(f'time {t} is not a multiple of the step {h}')
    return index


def _grid_size(T, h):
    if T <= 0 or h <= 0:
        raise SimulationError(f'horizon and step must be positive, got T={T}, h={h}')
    N = time_index(T, h)
    if N < 1:
        raise SimulationError(f'horizon {T} is shorter than one step {h}')
    return N


def stopping_caps(levels, h, N):
    caps = [math.floor(n / h + 1e-9) for n in levels]
    return np.array([c if c <= N else N + 1 for c in caps], dtype=np.int64)


class PathBundle:
    """Current state of a bundle of paths advanced one Euler step at a time.

    Exploded paths keep their last state before explosion; invalid paths keep
    the state at which their coefficients failed.
    """

    def __init__(self, model: FactorModel, p, N):
        m, d = model.m, model.d
        self.model = model
        self.under_p = model.numeraire is None
        self.depth = model.exhaustion.depth
        self.x = np.repeat(np.asarray(model.x0, dtype=float).reshape(m, 1), p, axis=1)
        self.s = np.repeat(np.asarray(model.s0, dtype=float).reshape(d + 1, 1), p, axis=1)
        self.y = np.ones(p)
        self.alive = np.ones(p, dtype=bool)
        self.valid = np.ones(p, dtype=bool)
        self.explosion_index = np.full(p, N + 1, dtype=np.int64)
        self.first_error = None

    @property
    def running(self):
        return bool((self.alive & self.valid).any())

    def advance(self, t, z, h):
        """Step from index ``t`` to ``t + 1`` with normals ``z`` of shape ``(m, p)``.

        Returns the indices of the paths that stayed, exploded and turned
        invalid on this step.
        """
        empty = np.empty(0, dtype=np.int64)
        idx = np.flatnonzero(self.alive & self.valid)
        if idx.size == 0:
            return empty, empty, empty

        coeffs = self.model.coefficients(self.x[:, idx])
        bad = empty
        if coeffs.invalid.any():
            bad = idx[coeffs.invalid]
            self.valid[bad] = False
            if self.first_error is None:
                self.first_error = coeffs.error
            keep = ~coeffs.invalid
            idx = idx[keep]
            coeffs = _select(coeffs, keep)
            if idx.size == 0:
                return empty, empty, bad

        dW = math.sqrt(h) * z[:, idx]
        x_new = (self.x[:, idx] + coeffs.drift * h
                 + np.einsum('klq,lq->kq', coeffs.diffusion, dW))

        vol2 = (coeffs.volatility ** 2).sum(axis=1)
        log_s = ((coeffs.asset_rate - 0.5 * vol2) * h
                 + np.einsum('imq,mq->iq', coeffs.volatility, dW))
        s_new = self.s[:, idx] * np.exp(log_s)

        finite = np.isfinite(x_new).all(axis=0) & np.isfinite(s_new).all(axis=0)
        if self.under_p:
            theta2 = (coeffs.theta ** 2).sum(axis=0)
            log_y = ((-coeffs.short_rate - 0.5 * theta2) * h
                     - np.einsum('mq,mq->q', coeffs.theta, dW))
            y_new = self.y[idx] * np.exp(log_y)
            finite &= np.isfinite(y_new)

        inside = finite & self.model.exhaustion.contains(self.depth,
                                                         np.where(finite, x_new, 0.0))
        gone = idx[~inside]
        stay = idx[inside]

        self.alive[gone] = False
        self.explosion_index[gone] = t + 1
        self.x[:, stay] = x_new[:, inside]
        self.s[:, stay] = s_new[:, inside]
        if self.under_p:
            self.y[stay] = y_new[inside]
        return stay, gone, bad

    def log_invalid(self):
        if self.first_error is not None:
            logger.warning('%d of %d paths invalid under %s: %s',
                           int((~self.valid).sum()), self.valid.size, self.model.measure,
                           self.first_error)


def _select(coeffs, keep):
    fields = {}
    for name in coeffs.__dataclass_fields__:
        value = getattr(coeffs, name)
        fields[name] = value[..., keep] if isinstance(value, np.ndarray) else value
    return type(coeffs)(**fields)


def simulate_paths(model: FactorModel, T, h, rng: RngContract, paths) -> xr.Dataset:
    """Simulate the full trajectories of the paths with the given indices.

    X follows Euler-Maruyama, S and Y the exact-in-log Euler scheme, so prices
    and the deflator stay positive until explosion. From the explosion index
    on S and Y are 0 and X is NaN. Paths whose coefficients fail to evaluate
    are marked invalid and carry NaN from the failing step on.
    """
    N = _grid_size(T, h)
    paths = np.asarray(paths, dtype=np.int64).reshape(-1)
    p, m, d = paths.size, model.m, model.d
    bundle = PathBundle(model, p, N)
    Z = NormalStream(rng, paths, m).take(N)

    X = np.full((N + 1, m, p), np.nan)
    S = np.zeros((N + 1, d + 1, p))
    Y = np.zeros((N + 1, p)) if bundle.under_p else None
    X[0], S[0] = bundle.x, bundle.s
    if bundle.under_p:
        Y[0] = bundle.y

    with np.errstate(all='ignore'):
        for t in range(N):
            if not bundle.running:
                break
            stay, _, bad = bundle.advance(t, Z[t], h)
            S[t + 1:, :, bad] = np.nan
            X[t + 1, :, stay] = bundle.x[:, stay].T
            S[t + 1, :, stay] = bundle.s[:, stay].T
            if bundle.under_p:
                Y[t + 1:, bad] = np.nan
                Y[t + 1, stay] = bundle.y[stay]
    bundle.log_invalid()

    data_vars = {
        'X': (('step', 'factor', 'path'), X),
        'S': (('step', 'asset', 'path'), S),
        'exploded': (('path',), bundle.explosion_index <= N),
        'explosion_index': (('path',), bundle.explosion_index),
        'valid': (('path',), bundle.valid),
    }
    if bundle.under_p:
        data_vars['Y'] = (('step', 'path'), Y)

    return xr.Dataset(data_vars,
                      coords={'time': (('step',), np.arange(N + 1) * h),
                              'step': np.arange(N + 1),
                              'factor': np.arange(1, m + 1),
                              'asset': np.arange(d + 1),
                              'path': paths},
                      attrs={'measure': model.measure, 'h': h, 'T': T,
                             'seed': rng.seed})


def simulate_path(model: FactorModel, T, h, rng: RngContract, k=0) -> xr.Dataset:
    return simulate_paths(model, T, h, rng, [k]).isel(path=0)


def detect_stopping(paths: xr.Dataset, exhaustion, levels=None) -> xr.Dataset:
    """Add ``zeta`` (level, path): min(first exit of Ē_n, last grid index not after n).

    Indices past the grid are N + 1, meaning not stopped within the horizon.
    """
    if levels is None:
        levels = range(1, exhaustion.depth + 1)
    levels = [int(n) for n in levels]

    ds = paths if 'path' in paths.dims else paths.expand_dims('path')
    X = ds['X'].transpose('step', 'factor', 'path').values
    N = X.shape[0] - 1

    exits = exhaustion.first_exits(X, levels)
    caps = stopping_caps(levels, float(ds.attrs['h']), N)
    zeta = np.minimum(exits, caps[:, None])

    out = ds.assign(zeta=(('level', 'path'), zeta)).assign_coords(level=levels)
    if 'path' not in paths.dims:
        out = out.isel(path=0)
    return out


def _summary_dataset(data_vars, observe, levels, paths, d, attrs):
    summary = xr.Dataset(data_vars,
                         coords={'obs': np.asarray(observe, dtype=float),
                                 'level': list(levels),
                                 'asset': np.arange(d + 1),
                                 'path': paths},
                         attrs=attrs)
    summary['S_rho'] = summary['S_rho'].where(summary['exploded'])
    return summary


def summarize(paths: xr.Dataset, observe, levels) -> xr.Dataset:
    """Reduce a stopped bundle to what the estimators consume.

    ``S_stop`` samples S at min(t, ζ_n, ζ-) and ``S_pre`` at min(t, ζ-), where
    ζ- is the last grid index before explosion.
    """
    h = float(paths.attrs['h'])
    obs_idx = np.array([time_index(t, h) for t in observe], dtype=np.int64)

    S = paths['S'].transpose('step', 'asset', 'path').values
    expl = paths['explosion_index'].values
    zeta = paths['zeta'].sel(level=list(levels)).transpose('level', 'path').values
    last = expl - 1
    cols = np.arange(S.shape[2])

    def take(index):
        # index has trailing dim path; result (..., asset, path)
        return np.moveaxis(S[index, :, cols], -1, -2)

    t = obs_idx[:, None]
    pre_idx = np.minimum(t, last[None, :])
    stop_idx = np.minimum(np.minimum(t[:, None, :], zeta[None, :, :]), last[None, None, :])

    data_vars = {
        'S_obs': (('obs', 'asset', 'path'), take(np.broadcast_to(t, pre_idx.shape))),
        'S_pre': (('obs', 'asset', 'path'), take(pre_idx)),
        'S_stop': (('obs', 'level', 'asset', 'path'), take(stop_idx)),
        'S_rho': (('asset', 'path'), take(np.minimum(last, S.shape[0] - 1))),
        'alive': (('obs', 'path'), expl[None, :] > t),
        'exploded': (('path',), paths['exploded'].values),
        'explosion_index': (('path',), expl),
        'valid': (('path',), paths['valid'].values),
        'zeta': (('level', 'path'), zeta),
    }
    if 'Y' in paths:
        Y = paths['Y'].transpose('step', 'path').values
        data_vars['Y_obs'] = (('obs', 'path'), Y[np.broadcast_to(t, pre_idx.shape), cols])

    return _summary_dataset(data_vars, observe, levels, paths['path'].values,
                            S.shape[1] - 1, dict(paths.attrs))


def simulate_summary(model: FactorModel, T, h, rng: RngContract, paths, observe,
                     levels) -> xr.Dataset:
    """``summarize(detect_stopping(simulate_paths(...)))`` without storing paths.

    Prices are recorded at the observation times, at each level's stopping
    index and before explosion while the bundle is stepped. Invalid paths
    carry NaN throughout.
    """
    N = _grid_size(T, h)
    obs_idx = np.array([time_index(t, h) for t in observe], dtype=np.int64)
    if obs_idx.max(initial=0) > N:
        raise SimulationError(f'observation time {max(observe)} beyond horizon {T}')
    levels = [int(n) for n in levels]
    level_arr = np.array(levels, dtype=np.int64)
    L = len(levels)
    caps = stopping_caps(levels, h, N)

    paths = np.asarray(paths, dtype=np.int64).reshape(-1)
    p, d = paths.size, model.d
    exhaustion = model.exhaustion
    bundle = PathBundle(model, p, N)
    stream = NormalStream(rng, paths, model.m)

    S_obs = np.zeros((obs_idx.size, d + 1, p))
    Y_obs = np.zeros((obs_idx.size, p))
    exits = np.full((L, p), N + 1, dtype=np.int64)
    S_tau = np.full((L, d + 1, p), np.nan)
    stopped = np.zeros((L, p), dtype=bool)
    # row of the smallest level each path has not left yet
    pending = np.zeros(p, dtype=np.int64)

    def leave_all(cols, index, record):
        rows = np.arange(L)[:, None] >= pending[None, cols]
        exits[:, cols] = np.where(rows, index, exits[:, cols])
        if record:
            fresh = rows & ~stopped[:, cols]
            S_tau[:, :, cols] = np.where(fresh[:, None, :], bundle.s[None, :, cols],
                                         S_tau[:, :, cols])
            stopped[:, cols] |= fresh
        pending[cols] = L

    def leave_levels(cols, index):
        # Ē_n are nested, so a path still inside its smallest pending level
        # is inside every larger one
        check = cols[pending[cols] < L]
        while check.size:
            inside = exhaustion.contains_levels(level_arr[pending[check]],
                                                bundle.x[:, check])
            out = check[~inside]
            rows = pending[out]
            exits[rows, out] = index
            fresh = ~stopped[rows, out]
            S_tau[rows[fresh], :, out[fresh]] = bundle.s[:, out[fresh]].T
            stopped[rows[fresh], out[fresh]] = True
            pending[out] += 1
            check = out[pending[out] < L]

    def mark(index):
        for row in np.flatnonzero(caps == index):
            fresh = ~stopped[row]
            S_tau[row][:, fresh] = bundle.s[:, fresh]
            stopped[row] |= fresh
        for o in np.flatnonzero(obs_idx == index):
            S_obs[o] = np.where(bundle.alive, bundle.s, 0.0)
            Y_obs[o] = np.where(bundle.alive, bundle.y, 0.0)

    leave_levels(np.arange(p), 0)
    mark(0)
    with np.errstate(all='ignore'):
        for t in range(N):
            if not bundle.running:
                break
            if t % BLOCK_STEPS == 0:
                block = stream.take(min(BLOCK_STEPS, N - t))
            stay, gone, bad = bundle.advance(t, block[t % BLOCK_STEPS], h)
            leave_levels(stay, t + 1)
            leave_all(gone, t + 1, record=True)
            leave_all(bad, t + 1, record=False)
            mark(t + 1)
    bundle.log_invalid()

    expl = bundle.explosion_index
    exploded = expl <= N
    zeta = np.minimum(exits, caps[:, None])
    tau = np.minimum(zeta, expl[None, :] - 1)
    before = obs_idx[:, None, None] <= tau[None, :, :]
    alive = expl[None, :] > obs_idx[:, None]

    S_pre = np.where(alive[:, None, :], S_obs, bundle.s[None])
    S_stop = np.where(before[:, :, None, :], S_obs[:, None], S_tau[None])
    S_rho = bundle.s.copy()

    invalid = ~bundle.valid
    for values in (S_obs, S_pre, S_stop, S_rho, Y_obs):
        values[..., invalid] = np.nan

    data_vars = {
        'S_obs': (('obs', 'asset', 'path'), S_obs),
        'S_pre': (('obs', 'asset', 'path'), S_pre),
        'S_stop': (('obs', 'level', 'asset', 'path'), S_stop),
        'S_rho': (('asset', 'path'), S_rho),
        'alive': (('obs', 'path'), alive),
        'exploded': (('path',), exploded),
        'explosion_index': (('path',), expl),
        'valid': (('path',), bundle.valid),
        'zeta': (('level', 'path'), zeta),
    }
    if bundle.under_p:
        data_vars['Y_obs'] = (('obs', 'path'), Y_obs)

    return _summary_dataset(data_vars, observe, levels, paths, d,
                            {'measure': model.measure, 'h': h, 'T': T, 'seed': rng.seed})


def batch_simulate(model: FactorModel, T, h, n_paths, master_seed, workers=1,
                   observe=None, levels=None, chunk_size=16384,
                   max_invalid_fraction=1e-3) -> xr.Dataset:
    """Simulate ``n_paths`` paths and return their concatenated summaries.

    Chunks are fixed by ``chunk_size`` and always concatenated in path order,
    so the result is the same for any number of workers.
    """
    if n_paths < 1:
        raise SimulationError(f'n_paths must be at least 1, got {n_paths}')
    if workers < 1:
        raise SimulationError(f'workers must be at least 1, got {workers}')
    if chunk_size < 1:
        raise SimulationError(f'chunk_size must be at least 1, got {chunk_size}')

    observe = (T,) if observe is None else tuple(observe)
    if levels is None:
        levels = range(1, model.exhaustion.depth + 1)
    levels = tuple(int(n) for n in levels)
    if levels and max(levels) > model.exhaustion.depth:
        raise SimulationError(f'level {max(levels)} exceeds the exhaustion depth '
                              f'{model.exhaustion.depth}')
    if max(observe) > T:
        raise SimulationError(f'observation time {max(observe)} beyond horizon {T}')

    rng = RngContract(seed=master_seed, measure_code=model.measure_code)
    chunks = [range(start, min(start + chunk_size, n_paths))
              for start in range(0, n_paths, chunk_size)]

    def run_chunk(chunk):
        logger.debug('simulating paths %d..%d under %s',
                     chunk.start, chunk.stop - 1, model.measure)
        return simulate_summary(model, T, h, rng, chunk, observe, levels)

    if workers == 1 or len(chunks) == 1:
        parts = [run_chunk(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(run_chunk, chunks))

    summary = xr.concat(parts, dim='path', data_vars='minimal', coords='minimal',
                        combine_attrs='override') if len(parts) > 1 else parts[0]

    n_invalid = int((~summary['valid']).sum())
    if n_invalid > max_invalid_fraction * n_paths:
        raise InvalidPathError(f'{n_invalid} of {n_paths} paths invalid under '
                               f'{model.measure}, above the {max_invalid_fraction:g} '
                               f'threshold')
    summary.attrs.update(n_paths=n_paths, n_invalid=n_invalid)
    logger.debug('%d paths under %s, %d exploded, %d invalid', n_paths, model.measure,
                 int(summary['exploded'].sum()), n_invalid)
    return summary
