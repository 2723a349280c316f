import sys

from rscorrect.cli import main

sys.exit(main())
