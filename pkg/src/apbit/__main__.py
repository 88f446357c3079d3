import sys

from apbit.cli import main

sys.exit(main())
