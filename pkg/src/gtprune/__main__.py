import sys

from gtprune.cli import main

sys.exit(main())
