import sys

from ckqti.cli import main

sys.exit(main())
