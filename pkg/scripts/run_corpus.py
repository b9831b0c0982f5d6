#!/usr/bin/env python3
"""Run the scripted regression corpus and print the consensus metrics.

Equivalent to: belief-consensus run --config configs/corpus.yaml
"""

import sys
from pathlib import Path

from belief_consensus.cli import main

REPO = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(main(["run", "--config", str(REPO / "configs" / "corpus.yaml"), *sys.argv[1:]]))
