import sys

from snnforge.cli import main

sys.exit(main())
