"""
Landseer command line entrypoint.

Usage:
    python scripts/landseer_cli.py synth samples/four_tool/model.toml runs/four-tool
    python scripts/landseer_cli.py run runs/four-tool/experiment.toml
    python scripts/landseer_cli.py --help
"""

import sys
from pathlib import Path

# Add parent to path for imports
sys.path.insert(0, str(Path(__file__).parent))

from landseer.cli import main

if __name__ == "__main__":
    sys.exit(main())
