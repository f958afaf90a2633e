import sys

from tbrfi.cli import main

sys.exit(main())
