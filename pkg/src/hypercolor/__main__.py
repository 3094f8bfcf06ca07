"""``python -m hypercolor``."""
import sys

from .cli import main

sys.exit(main())
