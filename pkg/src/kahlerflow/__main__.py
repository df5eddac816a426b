import sys

from kahlerflow.cli import main

sys.exit(main())
