import sys

from uherd.cli import main

sys.exit(main())
