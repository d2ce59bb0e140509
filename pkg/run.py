#!/usr/bin/env python3
"""
Launcher script for the fading-MAC game solver.
This script sets up the Python path correctly and runs the command line.
"""

import sys
from pathlib import Path

# Add the project root to Python path for config imports
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

# Add the src directory to Python path
src_dir = Path(__file__).parent / "src"
sys.path.insert(0, str(src_dir))

if __name__ == "__main__":
    from main import main

    try:
        import asyncio
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        print("\nStopped by user")
        sys.exit(1)
