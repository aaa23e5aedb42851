"""
Base class for all pipeline stages.
"""

from abc import ABC, abstractmethod
from typing import Any, Dict

from src.stages.run_state import RunState
from src.utils.logger import setup_logger


class BaseStage(ABC):
    """Base class for all pipeline stages."""

    def __init__(self, stage_name: str, config: Dict[str, Any], run_state: RunState):
        """
        Initialize base stage.

        Args:
            stage_name: Stage name (also the logger name)
            config: Resolved run configuration
            run_state: Run directory and stage bookkeeping
        """
        self.stage_name = stage_name
        self.config = config
        self.run_state = run_state
        self.logger = setup_logger(stage_name)
        self.running = False

    def start(self) -> None:
        """Start the stage."""
        self.running = True
        self.run_state.mark(self.stage_name, "started")
        self.logger.info(f"{self.stage_name} started (run dir {self.run_state.run_dir})")

    def stop(self) -> None:
        """Stop the stage."""
        self.running = False
        self.logger.info(f"{self.stage_name} stopped")

    def health_check(self) -> Dict[str, Any]:
        """
        Perform health check.

        Returns:
            Health status dictionary
        """
        return {
            "stage": self.stage_name,
            "running": self.running,
            "status": "running" if self.running else "stopped",
        }

    def execute(self) -> Dict[str, Any]:
        """
        Run the stage inside its start/stop lifecycle and record the outcome.

        Returns:
            The stage summary from run()
        """
        self.start()
        try:
            summary = self.run()
        except Exception as e:
            self.run_state.mark(self.stage_name, "failed", error=str(e))
            raise
        finally:
            self.stop()
        self.run_state.mark(self.stage_name, "finished", **summary)
        return summary

    @abstractmethod
    def run(self) -> Dict[str, Any]:
        """
        Stage body. Must be implemented by subclasses.

        Returns:
            Summary values (plain scalars and strings) for run_state.yaml
        """
        pass
