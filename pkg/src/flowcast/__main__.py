import sys

from flowcast.cli import main

sys.exit(main())
