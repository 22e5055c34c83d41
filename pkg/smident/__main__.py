import sys

from smident.cli import main

sys.exit(main())
