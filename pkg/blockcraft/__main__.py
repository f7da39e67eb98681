import sys

from blockcraft.experiments.cli import main

sys.exit(main())
