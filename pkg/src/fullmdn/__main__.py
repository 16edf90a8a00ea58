import sys

from fullmdn.cli import main

sys.exit(main())
