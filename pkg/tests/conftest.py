import sys
from pathlib import Path

# Make the test-side helpers (gradcheck, oracles) importable as top-level
# modules regardless of how pytest is invoked.
sys.path.insert(0, str(Path(__file__).parent))
