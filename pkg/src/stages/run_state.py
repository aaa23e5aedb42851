"""
Run directory management: every subcommand writes under
<output_root>/<YYYYmmdd-HHMMSS>_seed<seed>/ next to the resolved config.
"""

from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from src.utils.config_loader import dump_config
from src.utils.logger import setup_logger

RESOLVED_CONFIG_NAME = "config.resolved.yaml"
STATE_FILE_NAME = "run_state.yaml"


class RunState:
    """Owns one run directory and the per-stage status file inside it."""

    def __init__(self, config: Dict[str, Any], output_root: Optional[str] = None,
                 timestamp: Optional[datetime] = None):
        """
        Create the run directory and write the resolved config into it.

        Args:
            config: Resolved run configuration
            output_root: Parent directory (default: config output_root)
            timestamp: Run time (default: now)
        """
        self.config = config
        self.logger = setup_logger("RunState")
        root = Path(output_root or config.get("output_root", "runs"))
        stamp = (timestamp or datetime.now()).strftime("%Y%m%d-%H%M%S")
        base = f"{stamp}_seed{config.get('seed', 0)}"

        self.run_dir = root / base
        suffix = 1
        while self.run_dir.exists():
            self.run_dir = root / f"{base}_{suffix}"
            suffix += 1
        self.run_dir.mkdir(parents=True)
        dump_config(config, self.run_dir / RESOLVED_CONFIG_NAME)
        self.state: Dict[str, Dict[str, Any]] = {}
        self.logger.info(f"Run directory: {self.run_dir}")

    def path(self, *parts: str) -> Path:
        """Path inside the run directory (parent directories are created)."""
        target = self.run_dir.joinpath(*parts)
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def mark(self, stage: str, status: str, **info: Any) -> None:
        """Record a stage status change in run_state.yaml."""
        entry = self.state.setdefault(stage, {})
        entry["status"] = status
        entry[f"{status}_at"] = datetime.now().isoformat(timespec="seconds")
        entry.update({k: (str(v) if isinstance(v, Path) else v) for k, v in info.items()})
        with open(self.run_dir / STATE_FILE_NAME, "w") as f:
            yaml.safe_dump(self.state, f, sort_keys=True)

    def load_state(self) -> Dict[str, Dict[str, Any]]:
        path = self.run_dir / STATE_FILE_NAME
        if not path.exists():
            return {}
        with open(path) as f:
            return yaml.safe_load(f) or {}
