import sys

from dpunion.cli import main

sys.exit(main())
