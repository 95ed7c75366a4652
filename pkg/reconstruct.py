#!/usr/bin/env python3
"""
Experiment Runner Launcher
Run this from the project root to evaluate experiment specs
"""
import sys
from pathlib import Path

# Make the src package importable
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.core.runner import main

if __name__ == "__main__":
    sys.exit(main())
