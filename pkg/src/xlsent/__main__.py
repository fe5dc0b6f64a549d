import sys

from xlsent.cli import main

sys.exit(main())
