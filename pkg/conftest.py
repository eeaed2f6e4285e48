import sys
from pathlib import Path

# scripts and tests import the package and attic/ from the repository root
sys.path.insert(0, str(Path(__file__).parent))
