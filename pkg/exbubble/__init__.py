try:
    from ._version import __version__
except ImportError:
    __version__ = "unknown"

from exbubble.expr import parse  # noqa
from exbubble.model import FactorModel  # noqa
from exbubble.model import numeraire_adjust  # noqa
from exbubble.model import solve_theta  # noqa
from exbubble.model import validate  # noqa
from exbubble.pricing import MCConfig  # noqa
from exbubble.pricing import MCEstimate  # noqa
from exbubble.pricing import Method  # noqa


def test():
    """Run the exbubble test suite."""
    import os
    try:
        import pytest
    except ImportError:
        import sys
        sys.stderr.write("You need to install py.test to run tests.\n\n")
        raise
    pytest.main([os.path.dirname(__file__)])
