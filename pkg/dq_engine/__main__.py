import sys

from dq_engine.cli import main

sys.exit(main())
