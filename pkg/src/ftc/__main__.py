import sys

from ftc.cli import main

sys.exit(main())
