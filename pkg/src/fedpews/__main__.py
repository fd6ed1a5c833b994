import sys

from fedpews.cli import main

sys.exit(main())
