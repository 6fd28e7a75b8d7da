"""``python -m refliter``."""
import sys

from .cli import main

sys.exit(main())
