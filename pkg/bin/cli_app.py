#!/usr/bin/env python
"""
TeShu command-line harness.

    bin/cli_app.py run --template network_aware --workload duplicate:n=2000,copies=20,local=2 --oversub 10
    bin/cli_app.py sampling-sweep --out sweep.csv
    bin/cli_app.py decision-matrix --format json
    bin/cli_app.py failures --k 3 --scenarios 100 --oversub 10
    bin/cli_app.py serve-manager --port 7470
    bin/cli_app.py install-template templates/vanilla_push.tsh
"""

import os
import sys

# Add the parent directory to the path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
