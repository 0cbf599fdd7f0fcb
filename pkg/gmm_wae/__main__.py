import sys

from gmm_wae.cli import main

sys.exit(main())
