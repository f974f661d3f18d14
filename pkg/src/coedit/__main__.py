import sys

from coedit.cli import main

sys.exit(main())
