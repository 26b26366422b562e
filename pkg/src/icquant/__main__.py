import sys

from icquant.cli import main

sys.exit(main())
