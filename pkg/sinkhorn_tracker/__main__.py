import sys

from sinkhorn_tracker.cli.app import main

if __name__ == "__main__":
    sys.exit(main())
