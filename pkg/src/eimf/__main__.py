import sys

from eimf.cli import main

sys.exit(main())
