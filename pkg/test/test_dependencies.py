#!/usr/bin/env python
"""
Checks that the dependency stack and every application module import.
"""

import importlib
import logging
import os
import sys
import unittest

# Add the parent directory to the path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

logger = logging.getLogger(__name__)

PACKAGES = ("click", "anyio", "dotenv", "numpy")
MODULES = (
    "app.utils",
    "app.cli",
    "app.shuffle",
    "app.shuffle.experiments",
    "app.manager",
    "app.manager.server",
)


class TestDependencies(unittest.TestCase):

    def test_packages_import(self):
        for name in PACKAGES:
            with self.subTest(package=name):
                logger.info(f"Importing {name}")
                importlib.import_module(name)

    def test_app_modules_import(self):
        for name in MODULES:
            with self.subTest(module=name):
                logger.info(f"Importing {name}")
                importlib.import_module(name)


if __name__ == "__main__":
    unittest.main()
