import sys

from tdbm.cli import main

sys.exit(main())
