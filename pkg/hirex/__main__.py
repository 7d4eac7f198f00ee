"""Run the ``hirex`` command line: ``python -m hirex``."""

import sys
from .cli import main


sys.exit(main())
