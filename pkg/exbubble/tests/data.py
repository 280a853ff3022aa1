import math
from os import path

from exbubble.bessel import bessel_model
from exbubble.domains import BoxExhaustion
from exbubble.model import build_model
from exbubble.presets import gbm_pair_model
from exbubble.pricing import MCConfig

HERE = path.abspath(path.dirname(__file__))
FIXTURES_DIR = path.join(HERE, 'fixtures')

DEFAULT_MODEL_FUNCS = [bessel_model,
                       gbm_pair_model]

ALLOWANCE = 5e-3

# At h = 2^-10 the missed crossings between grid points bias the Q^0 default
# probability by about 0.006 and the premium by about 0.012, both well inside
# three standard errors at 4000 paths.
BESSEL_CONFIG = MCConfig(n_paths=4000, step=2 ** -10, seed=11, n_max=4, allowance=ALLOWANCE)

# the degeneracy conditions are read off levels 1..8, so the horizon is 8
DEGENERACY_CONFIG = MCConfig(n_paths=4000, step=2 ** -10, seed=13, n_max=8,
                             allowance=ALLOWANCE)

STRIKES = (0.5, 1.0, 2.0)
MATURITIES = (0.25, 1.0, 4.0)

# the log-Euler scheme is exact for constant coefficients
GBM_CONFIG = MCConfig(n_paths=4000, step=0.25, seed=5, n_max=4, allowance=0.0)


def normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def margrabe_reference(si0, sj0, sigma, T):
    """Exchange value for a relative volatility ``sigma``."""
    if sigma == 0:
        return max(sj0 - si0, 0.0)
    d1 = (math.log(sj0 / si0) + 0.5 * sigma ** 2 * T) / (sigma * math.sqrt(T))
    return sj0 * normal_cdf(d1) - si0 * normal_cdf(d1 - sigma * math.sqrt(T))


def drift_model(drift, x0=0.0, depth=4, diffusion='0'):
    """One factor, no risky asset, exhausted by the boxes [-n, n]."""
    return build_model(x0=[x0],
                       drift=[drift],
                       diffusion=[[diffusion]],
                       short_rate='0',
                       excess_return=[],
                       volatility=[],
                       s0=[1.0],
                       exhaustion=BoxExhaustion.from_strings(['-n'], ['n'], depth),
                       name=f'drift({drift})')


def equal_vol_model():
    """Two risky assets driven by the same Brownian motion, R^{12} = 1/2."""
    return build_model(x0=[0.0, 0.0],
                       drift=['0', '0'],
                       diffusion=[['1', '0'], ['0', '1']],
                       short_rate='0',
                       excess_return=['0.05', '0.05'],
                       volatility=[['0.2', '0'], ['0.2', '0']],
                       theta=['0.25', '0'],
                       s0=[1.0, 1.0, 2.0],
                       exhaustion=BoxExhaustion.from_strings([None, None], [None, None], 16),
                       name='equal-vol')
