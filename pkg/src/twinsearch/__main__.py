import sys

from twinsearch.cli import main

sys.exit(main())
