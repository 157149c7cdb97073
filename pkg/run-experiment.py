#!/usr/bin/env python3
"""
Run driftlab experiments

Usage:
    python run-experiment.py gradcheck
    python run-experiment.py finetune --preset smoke --method ssil
    python run-experiment.py sweep --preset paper-shape --workers 4
"""

import sys
from pathlib import Path

# Add driftlab package to path
sys.path.insert(0, str(Path(__file__).parent))

# Check dependencies before importing
try:
    import matplotlib
    import numpy
    import pydantic
    import tqdm
    import yaml
except ImportError as e:
    print(f"\n❌ Missing required Python dependencies: {e}")
    print("\n   Install with:")
    print("   pip install -r requirements.txt")
    sys.exit(1)

from driftlab.cli import main


if __name__ == "__main__":
    main()
