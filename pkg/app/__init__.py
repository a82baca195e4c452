"""
TeShu application package.
Contains the templated shuffle layer, the shuffle manager and the CLI harness.
"""

__version__ = "0.1.0"
