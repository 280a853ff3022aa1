"""
Nested exhaustions E_1 ⊆ E_2 ⊆ ... of the factor state space E.

The default time is approximated by the exit times of the closures Ē_n, so an
exhaustion must satisfy Ē_n ⊆ E_{n+1}. Two kinds are supported: boxes whose
per-coordinate bounds are expressions in the level ``n``, and user predicates.
"""
from dataclasses import dataclass
from dataclasses import field
from typing import Callable
from typing import Optional
from typing import Tuple

import numpy as np
from scipy.stats import qmc

from exbubble.exceptions import ExhaustionError
from exbubble.expr import ExprAst
from exbubble.expr import parse

LEVEL_NAMES = ('n',)


class DomainExhaustion:
    depth: int
    dim: int

    def contains(self, n, X):
        """Boolean mask of the columns of ``X`` (shape ``(dim, p)``) in Ē_n."""
        raise NotImplementedError

    def contains_levels(self, ns, X):
        """Membership of column ``k`` of ``X`` in Ē_{ns[k]}."""
        ns = np.asarray(ns, dtype=np.int64).reshape(-1)
        X = np.asarray(X, dtype=float).reshape(self.dim, -1)
        out = np.empty(ns.size, dtype=bool)
        for n in np.unique(ns):
            cols = ns == n
            out[cols] = self.contains(int(n), X[:, cols])
        return out

    def check_nested(self, x0):
        raise NotImplementedError

    def sample_states(self, x0, count=64, seed=0):
        raise NotImplementedError

    def _check_level(self, n):
        if not 1 <= n <= self.depth:
            raise ExhaustionError(f'level {n} outside 1..{self.depth}')

    def first_exits(self, X, levels):
        """First time index at which each path leaves Ē_n.

        ``X`` has shape ``(steps, dim, paths)``. Returns an integer array of
        shape ``(len(levels), paths)``; ``steps`` means the path never left.
        """
        steps, _, paths = X.shape
        out = np.full((len(levels), paths), steps, dtype=np.int64)
        flat = np.moveaxis(X, 1, 0).reshape(self.dim, steps * paths)
        finite = np.isfinite(flat).all(axis=0)
        safe = np.where(finite, flat, 0.0)
        for row, n in enumerate(levels):
            outside = ~(self.contains(n, safe) & finite)
            outside = outside.reshape(steps, paths)
            hit = outside.any(axis=0)
            out[row, hit] = outside.argmax(axis=0)[hit]
        return out


@dataclass(frozen=True)
class BoxExhaustion(DomainExhaustion):
    """Ē_n = [l_n, u_n] per coordinate; ``None`` bounds are unbounded."""

    lower: Tuple[Optional[ExprAst], ...]
    upper: Tuple[Optional[ExprAst], ...]
    depth: int
    _bounds: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ExhaustionError(f'{len(self.lower)} lower bounds but '
                                  f'{len(self.upper)} upper bounds')
        if self.depth < 1:
            raise ExhaustionError(f'exhaustion depth must be positive, got {self.depth}')

        levels = np.arange(1, self.depth + 1, dtype=float).reshape(1, -1)
        lows = np.empty((self.depth, self.dim))
        highs = np.empty((self.depth, self.dim))
        for k in range(self.dim):
            lows[:, k] = self._evaluate_bound(self.lower[k], levels, -np.inf, k)
            highs[:, k] = self._evaluate_bound(self.upper[k], levels, np.inf, k)
        object.__setattr__(self, '_bounds', (lows, highs))

    @staticmethod
    def _evaluate_bound(ast, levels, default, k):
        if ast is None:
            return np.full(levels.shape[1], default)
        values, invalid, error = ast.evaluate_many(levels)
        if invalid.any():
            n = int(levels[0, invalid.argmax()])
            raise ExhaustionError(f'bound `{ast}` of coordinate {k + 1} '
                                  f'fails at n={n}: {error[0]}')
        return values

    @classmethod
    def from_strings(cls, lower, upper, depth):
        def to_ast(source):
            if source is None:
                return None
            return parse(str(source), 1, names=LEVEL_NAMES)

        return cls(lower=tuple(to_ast(s) for s in lower),
                   upper=tuple(to_ast(s) for s in upper),
                   depth=int(depth))

    @property
    def dim(self):
        return len(self.lower)

    def bounds(self, n):
        self._check_level(n)
        lows, highs = self._bounds
        return lows[n - 1].copy(), highs[n - 1].copy()

    def contains(self, n, X):
        lo, hi = self.bounds(n)
        X = np.asarray(X, dtype=float).reshape(self.dim, -1)
        return ((X >= lo[:, None]) & (X <= hi[:, None])).all(axis=0)

    def contains_levels(self, ns, X):
        lows, highs = self._bounds
        ns = np.asarray(ns, dtype=np.int64).reshape(-1)
        if ns.size and not ((ns >= 1) & (ns <= self.depth)).all():
            raise ExhaustionError(f'levels outside 1..{self.depth}')
        X = np.asarray(X, dtype=float).reshape(self.dim, -1)
        lo, hi = lows[ns - 1].T, highs[ns - 1].T
        return ((X >= lo) & (X <= hi)).all(axis=0)

    def first_exits(self, X, levels):
        # running extremes turn the exit test into one comparison per level
        steps, _, paths = X.shape
        lows, highs = self._bounds
        running_min = np.fmin.accumulate(X, axis=0)
        running_max = np.fmax.accumulate(X, axis=0)
        nonfinite = np.logical_or.accumulate(~np.isfinite(X).all(axis=1), axis=0)

        out = np.full((len(levels), paths), steps, dtype=np.int64)
        for row, n in enumerate(levels):
            self._check_level(n)
            lo = lows[n - 1][None, :, None]
            hi = highs[n - 1][None, :, None]
            outside = ((running_min < lo) | (running_max > hi)).any(axis=1)
            outside |= nonfinite
            hit = outside.any(axis=0)
            out[row, hit] = outside.argmax(axis=0)[hit]
        return out

    def check_nested(self, x0):
        lows, highs = self._bounds
        if not (lows < highs).all():
            n = int(np.argwhere(~(lows < highs))[0, 0]) + 1
            raise ExhaustionError(f'empty box at level {n}')

        # Ē_n ⊆ E_{n+1}: finite bounds must move strictly outwards
        for lo_n, lo_next, label in ((lows[:-1], lows[1:], 'lower'),
                                     (-highs[:-1], -highs[1:], 'upper')):
            finite = np.isfinite(lo_n) | np.isfinite(lo_next)
            bad = finite & ~(lo_next < lo_n)
            if bad.any():
                n, k = np.argwhere(bad)[0]
                raise ExhaustionError(
                    f'{label} bound of coordinate {k + 1} does not move outwards '
                    f'between levels {n + 1} and {n + 2}')

        x0 = np.asarray(x0, dtype=float).reshape(self.dim, 1)
        if not self.contains(1, x0)[0]:
            raise ExhaustionError(f'x0={x0.ravel().tolist()} is not in the closure of E_1')

    def sample_states(self, x0, count=64, seed=0):
        lo, hi = self.bounds(1)
        x0 = np.asarray(x0, dtype=float)
        lo = np.where(np.isfinite(lo), lo, x0 - 1.0)
        hi = np.where(np.isfinite(hi), hi, x0 + 1.0)
        unit = qmc.Sobol(d=self.dim, scramble=True, seed=seed).random(count)
        return (lo + (hi - lo) * unit).T


@dataclass(frozen=True)
class PredicateExhaustion(DomainExhaustion):
    """Exhaustion given by a user predicate ``member(n, X) -> mask``.

    ``member`` receives states with shape ``(dim, p)`` and returns a boolean
    mask of length ``p`` telling which states lie in Ē_n.
    """

    member: Callable
    dim: int
    depth: int

    def contains(self, n, X):
        self._check_level(n)
        X = np.asarray(X, dtype=float).reshape(self.dim, -1)
        return np.asarray(self.member(n, X), dtype=bool).reshape(-1)

    def check_nested(self, x0):
        # nesting of arbitrary predicates cannot be verified, only sampled
        grid = self.sample_states(x0, count=64)
        for n in range(1, min(self.depth, 16)):
            inside = self.contains(n, grid)
            if inside.any() and not self.contains(n + 1, grid[:, inside]).all():
                raise ExhaustionError(f'level {n} is not contained in level {n + 1} '
                                      f'on the sample grid')
        x0 = np.asarray(x0, dtype=float).reshape(self.dim, 1)
        if not self.contains(1, x0)[0]:
            raise ExhaustionError(f'x0={x0.ravel().tolist()} is not in the closure of E_1')

    def sample_states(self, x0, count=64, seed=0):
        x0 = np.asarray(x0, dtype=float)
        unit = qmc.Sobol(d=self.dim, scramble=True, seed=seed).random(count)
        box = (x0 - 1.0 + 2.0 * unit).T
        inside = self.contains(1, box)
        return np.concatenate([x0.reshape(-1, 1), box[:, inside]], axis=1)
