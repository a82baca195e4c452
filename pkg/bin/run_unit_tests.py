#!/usr/bin/env python
"""
Unit test runner for the TeShu shuffle project.
Runs all tests in the test directory, or a selection of modules.
"""

import argparse
import logging
import os
import sys
import time
import unittest

# Add the project root to the path
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.append(PROJECT_ROOT)

from app.utils import setup_logging

logger = logging.getLogger('unit_tests')


def run_tests(verbose=False, individual=False, modules=None):
    """
    Run unit tests from the test directory.

    Args:
        verbose: If True, show more detailed test output
        individual: If True, run each test file individually
        modules: Optional module names (e.g. test_engine) to restrict the run

    Returns:
        Process exit code: 0 when every test passed.
    """
    start_time = time.time()
    test_dir = os.path.join(PROJECT_ROOT, 'test')
    test_files = sorted(f[:-3] for f in os.listdir(test_dir)
                        if f.startswith('test_') and f.endswith('.py'))
    if modules:
        unknown = set(modules) - set(test_files)
        if unknown:
            logger.error(f"Unknown test modules: {', '.join(sorted(unknown))}")
            return 2
        test_files = [f for f in test_files if f in modules]
    logger.info(f"Running {len(test_files)} test modules")

    runner = unittest.TextTestRunner(verbosity=2 if verbose else 1)
    if individual or modules:
        total_tests = failures = errors = 0
        for name in test_files:
            logger.info(f"Running tests from test.{name}")
            result = runner.run(unittest.defaultTestLoader.loadTestsFromName(f"test.{name}"))
            total_tests += result.testsRun
            failures += len(result.failures)
            errors += len(result.errors)
            print("-" * 70)
        logger.info(f"Ran {total_tests} tests with {failures} failures and {errors} errors")
        success = failures == 0 and errors == 0
    else:
        result = runner.run(unittest.defaultTestLoader.discover(test_dir, top_level_dir=PROJECT_ROOT))
        success = result.wasSuccessful()

    duration = time.time() - start_time
    if success:
        logger.info(f"All tests passed in {duration:.2f} seconds")
        return 0
    logger.error(f"Tests completed with failures in {duration:.2f} seconds")
    return 1


def main():
    """Parse command line arguments and run tests."""
    parser = argparse.ArgumentParser(description='Run unit tests for the TeShu shuffle project')
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='Show more detailed test output')
    parser.add_argument('-i', '--individual', action='store_true',
                        help='Run each test file individually')
    parser.add_argument('modules', nargs='*',
                        help='Test modules to run (e.g. test_engine); default all')
    args = parser.parse_args()
    setup_logging('unit_tests')
    return run_tests(args.verbose, args.individual, args.modules)


if __name__ == "__main__":
    sys.exit(main())
