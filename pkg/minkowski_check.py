#!/usr/bin/env python3
"""
Minkowski Surface Geometry Checks

Runs the identity suite (or any other subcommand) on a body/surface pair.
Example:
    python minkowski_check.py identity-suite --body specs/ellipsoid.json --surface specs/minkowski_sphere.json
"""

import sys

from src.cli import main


if __name__ == '__main__':
    sys.exit(main())
