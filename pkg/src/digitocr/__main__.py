import sys

from digitocr.cli import main

sys.exit(main())
