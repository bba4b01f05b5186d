"""Allow ``python -m mosden`` as an alias for the ``mosden`` script."""

import sys

from mosden.cli import main

if __name__ == "__main__":
    sys.exit(main())
