import sys

from airfed.cli import main

sys.exit(main())
