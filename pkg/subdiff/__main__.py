# __main__.py - python -m subdiff
import sys

from subdiff.cli import main

sys.exit(main())
