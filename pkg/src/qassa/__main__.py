"""qassa command-line entry point.

Usage:
  qassa generate --activities 10 --services 50 --synthetic --out instance.json
  qassa select --instance instance.json --json
"""

import sys

from .cli import main

__all__ = ["main"]


if __name__ == "__main__":
    sys.exit(main())
