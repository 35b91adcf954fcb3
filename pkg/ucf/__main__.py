import sys

from ucf.main import run

sys.exit(run())
