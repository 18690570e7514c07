import sys

from gemsim.cli import main

sys.exit(main())
