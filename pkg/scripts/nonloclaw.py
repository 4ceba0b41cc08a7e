#!/usr/bin/env python3

import argparse
import sys

from nonloclaw.experiments import run_cmd, verify_cmd, study_cmd, resolvent_cmd


def add_common_arguments(subparser, threads=True):
    subparser.add_argument('--config', required=True, help="location of the run configuration file")
    subparser.add_argument('--out', default=None,
                           help="output directory, overrides [outputs] directory and $NONLOCLAW_OUT")
    subparser.add_argument('--seed', type=int, default=None, help="seed overriding [initial] seed")
    if threads:
        subparser.add_argument('--threads', type=int, default=1,
                               help="worker threads for independent evaluations; results do not depend on it")


if __name__ == '__main__':
    parser = argparse.ArgumentParser(formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    subparsers = parser.add_subparsers()
    run_parser = subparsers.add_parser('run', help="Evolve the configured problem and write snapshots",
                                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    verify_parser = subparsers.add_parser('verify', help="Check the solution properties and the entropy "
                                                         "inequality on the configured problem",
                                          formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    study_parser = subparsers.add_parser('study', help="Compare shrinking horizons against an exact local "
                                                       "solution",
                                         formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    resolvent_parser = subparsers.add_parser('resolvent', help="Solve u + lambda B u = g once",
                                             formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    add_common_arguments(run_parser)
    run_parser.set_defaults(func=run_cmd)

    add_common_arguments(verify_parser)
    verify_parser.add_argument('--trajectory', default=None,
                               help="snapshot directory with a manifest.json to audit instead of a fresh run")
    verify_parser.set_defaults(func=verify_cmd)

    add_common_arguments(study_parser)
    study_parser.set_defaults(func=study_cmd)

    add_common_arguments(resolvent_parser, threads=False)
    resolvent_parser.set_defaults(func=resolvent_cmd)

    args = parser.parse_args()
    if not hasattr(args, 'func'):
        parser.print_help()
        sys.exit(2)
    args_dict = {i: j for i, j in vars(args).items() if i != 'func'}
    sys.exit(args.func(args_dict.pop('config'), **args_dict))
