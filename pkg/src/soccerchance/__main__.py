import sys

from soccerchance.cli import main

sys.exit(main())
