"""
gen-data: render the synthetic dataset.
"""

from pathlib import Path
from typing import Any, Dict, Optional

from src.core.synth_data import generate_dataset
from src.stages.base_stage import BaseStage
from src.stages.builders import gen_config
from src.stages.run_state import RunState


class GenDataStage(BaseStage):
    """Writes images, masks, saliency maps and the manifest."""

    def __init__(self, config: Dict[str, Any], run_state: RunState, data_dir: Optional[str] = None):
        super().__init__("GenData", config, run_state)
        self.data_dir = Path(data_dir or config["data_dir"])

    def run(self) -> Dict[str, Any]:
        records = generate_dataset(gen_config(self.config), self.data_dir,
                                   num_workers=self.config["num_workers"])
        counts = {split: sum(r.split == split for r in records) for split in ("weak", "strong", "val")}
        self.logger.info(f"Dataset ready at {self.data_dir}: {counts}")
        return {"data_dir": str(self.data_dir), "records": len(records), **counts}
