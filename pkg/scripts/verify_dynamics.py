#!/usr/bin/env python3
"""Run the full-strength dynamics property suite (exit nonzero on failure).

Equivalent to: belief-consensus simulate --config configs/simulate.yaml
"""

import sys
from pathlib import Path

from belief_consensus.cli import main

REPO = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(main(["simulate", "--config", str(REPO / "configs" / "simulate.yaml"), *sys.argv[1:]]))
