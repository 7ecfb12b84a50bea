"""Module entry point: `python -m binimage` behaves like the console script."""

import sys

from .cli import main

sys.exit(main())
