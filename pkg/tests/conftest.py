import sys
from pathlib import Path

# make the sibling oracles module importable from any test file
sys.path.insert(0, str(Path(__file__).parent))
