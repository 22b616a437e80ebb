import sys

from pdadpmd.cli import main

sys.exit(main())
