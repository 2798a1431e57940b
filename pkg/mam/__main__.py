"""
Entry point for running mam as a package.

This module allows the package to be executed directly using:
python -m mam
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
