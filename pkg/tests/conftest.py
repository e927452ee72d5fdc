import sys
from pathlib import Path

# make tests/oracles.py and tests/gradsuite.py importable as plain modules
sys.path.insert(0, str(Path(__file__).parent))
