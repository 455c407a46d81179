import sys

from EVLAB.cli import main

sys.exit(main())
