import sys

from grtm.cli import main

sys.exit(main())
