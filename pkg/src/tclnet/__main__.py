"""`python -m tclnet` entry point."""

import sys

from tclnet.cli import main

if __name__ == "__main__":
    sys.exit(main())
