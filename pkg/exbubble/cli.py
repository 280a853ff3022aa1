"""
Command line entry point::

    exbubble --config bessel.yaml --out results.csv --workers 4

Exit codes: 0 when every pass flag holds, 1 when a check fails, 2 on a
configuration, model or simulation error.
"""
import argparse
import logging
import sys

from exbubble.core import all_passed
from exbubble.core import render
from exbubble.core import run
from exbubble.exceptions import ExbubbleError
from exbubble.io import FORMATS
from exbubble.io import load_config

logger = logging.getLogger(__name__)


def create_parser():
    parser = argparse.ArgumentParser(
        prog='exbubble',
        description='Monte Carlo pricing and verification of exchange options '
                    'in factor models with bubbles and explosion.')
    parser.add_argument('--config', required=True, help='YAML or JSON config file')
    parser.add_argument('--out', help='output file, standard output when omitted')
    parser.add_argument('--format', choices=FORMATS, help='output format (default: csv)')
    parser.add_argument('--seed', type=int, help='master seed, overrides the config')
    parser.add_argument('--workers', type=int, help='worker threads, overrides the config')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    return parser


def main(argv=None):
    args = create_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        request = load_config(args.config, seed=args.seed, workers=args.workers)
        results = run(request)
    except ExbubbleError as e:
        sys.stderr.write(f'exbubble: error: {e}\n')
        return 2

    fmt = args.format or request.format
    text = render(results, fmt)
    out = args.out or request.output
    if out:
        with open(out, 'w', newline='') as f:
            f.write(text)
        logger.info('wrote %d rows to %s', len(results), out)
    else:
        sys.stdout.write(text)

    return 0 if all_passed(results) else 1


if __name__ == '__main__':
    sys.exit(main())
