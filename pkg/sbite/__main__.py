import sys

from sbite.cli import main

sys.exit(main())
