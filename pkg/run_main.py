#!/usr/bin/env python3
"""
Simple wrapper to run main.py using venv Python.
Falls back to the current interpreter when no venv is present.
"""
import subprocess
import sys
from pathlib import Path

script_dir = Path(__file__).parent.absolute()

if sys.platform == "win32":
    venv_python = script_dir / "venv" / "Scripts" / "python.exe"
else:
    venv_python = script_dir / "venv" / "bin" / "python"

python = str(venv_python) if venv_python.exists() else sys.executable
result = subprocess.run([python, str(script_dir / "main.py")] + sys.argv[1:], cwd=script_dir)
sys.exit(result.returncode)
