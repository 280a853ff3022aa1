"""
Closed forms for the three-dimensional Bessel economy.

Under P the factor X is a three-dimensional Bessel process started at one,
S^0 = K is constant and S^1 = X. Under Q^0 the factor is a Brownian motion
started at one and killed at zero, so S^1 has a bubble and exchange values
are available in closed form.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from exbubble.domains import BoxExhaustion
from exbubble.exceptions import ModelError
from exbubble.model import build_model


@dataclass(frozen=True)
class BesselParams:
    K: float
    T: float

    def __post_init__(self):
        for name in ('K', 'T'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ModelError(f'{name} must be finite and positive, got {value}')


def norm_cdf(x):
    return ndtr(x)


def norm_sf(x):
    return ndtr(-np.asarray(x, dtype=float))


def _params(K, T):
    p = BesselParams(float(K), float(T))
    return p.K, p.T


def _gaussian_gap(K, T):
    # exp(-(1+K^2)/(2T)) sinh(K/T) without overflow as T -> 0
    return 0.5 * (math.exp(-(1.0 - K) ** 2 / (2.0 * T))
                  - math.exp(-(1.0 + K) ** 2 / (2.0 * T)))


def eur_ex_01(K, T):
    """EX^{01}(T), which also equals AX^{01}(T)."""
    K, T = _params(K, T)
    root = math.sqrt(T)
    return float((1.0 + K) * norm_sf((1.0 + K) / root)
                 + (1.0 - K) * norm_cdf((1.0 - K) / root)
                 + math.sqrt(2.0 * T / math.pi) * _gaussian_gap(K, T))


def default_prob_q0(T):
    """Q^0[ζ <= T] = 2Φ̄(1/√T)."""
    _, T = _params(1.0, T)
    return float(2.0 * norm_sf(1.0 / math.sqrt(T)))


def amer_ex_10(K, T):
    """AX^{10}(T) = AX^{01}(T) - (1 - K)."""
    K, T = _params(K, T)
    return eur_ex_01(K, T) - (1.0 - K)


def eur_ex_10(K, T):
    """EX^{10}(T) = AX^{10}(T) - 2KΦ̄(1/√T)."""
    K, T = _params(K, T)
    return amer_ex_10(K, T) - K * default_prob_q0(T)


def prob_above_p(K, T):
    """P[X_T > K] for the Bessel process started at one."""
    K, T = _params(K, T)
    root = math.sqrt(T)
    return float(norm_sf((K - 1.0) / root) + norm_sf((K + 1.0) / root)
                 + math.sqrt(2.0 * T / math.pi) * _gaussian_gap(K, T))


def prob_above_alive_q0(K, T):
    K, T = _params(K, T)
    root = math.sqrt(T)
    return float(norm_cdf((1.0 - K) / root) - norm_cdf(-(1.0 + K) / root))


def ratio_mean_q1(K, t):
    K, t = _params(K, t)
    return float(K * (2.0 * norm_cdf(1.0 / math.sqrt(t)) - 1.0))


def bessel_model(K=1.0, depth=1000):
    """The Bessel economy as a :class:`~exbubble.model.FactorModel`.

    E = (0, ∞) is exhausted by E_n = (1/n, n + 1); ``depth`` is the level whose
    exit is declared an explosion.
    """
    K = float(K)
    if not (math.isfinite(K) and K > 0):
        raise ModelError(f'K must be finite and positive, got {K}')
    exhaustion = BoxExhaustion.from_strings(lower=['1/n'], upper=['n+1'], depth=depth)
    return build_model(x0=[1.0],
                       drift=['1/x1'],
                       diffusion=[['1']],
                       short_rate='0',
                       excess_return=['1/x1^2'],
                       volatility=[['1/x1']],
                       theta=['1/x1'],
                       s0=[K, 1.0],
                       exhaustion=exhaustion,
                       name=f'bessel(K={K:g})')
