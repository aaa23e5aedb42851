"""
rf: receptive-field table for a layer list such as "3x3 d=1; pool2; 3x3 d=3".
"""

import re
from typing import Any, Dict, List, Tuple

from src.core.mdc_classifier import probe_receptive_field, receptive_field
from src.core.models import InvalidSpecError
from src.stages.base_stage import BaseStage
from src.stages.run_state import RunState

_KERNEL = re.compile(r"^(\d+)x(\d+)$")
_POOL = re.compile(r"^pool(\d+)$")
_OPTION = re.compile(r"^([sd])=(\d+)$")


def parse_rf_layers(text: str) -> List[Tuple[str, Tuple[int, int, int]]]:
    """
    Parse ';'-separated layers into (label, (kernel, stride, dilation)).

    Raises:
        InvalidSpecError: On an unreadable layer
    """
    layers = []
    for item in text.split(";"):
        tokens = item.split()
        if not tokens:
            continue
        pool = _POOL.match(tokens[0])
        kernel = _KERNEL.match(tokens[0])
        if pool:
            size = int(pool.group(1))
            k, s, d = size, size, 1
        elif kernel and kernel.group(1) == kernel.group(2):
            k, s, d = int(kernel.group(1)), 1, 1
        else:
            raise InvalidSpecError(f"cannot parse layer {item.strip()!r}")
        for token in tokens[1:]:
            option = _OPTION.match(token)
            if option is None:
                raise InvalidSpecError(f"cannot parse option {token!r} in {item.strip()!r}")
            if option.group(1) == "s":
                s = int(option.group(2))
            else:
                d = int(option.group(2))
        layers.append((" ".join(tokens), (k, s, d)))
    if not layers:
        raise InvalidSpecError("no layers given")
    return layers


def rf_table(layers: List[Tuple[str, Tuple[int, int, int]]]) -> List[Tuple[str, int, int]]:
    """One (label, analytic, probed) row per layer on its own, then one for the whole stack."""
    rows = [(label, receptive_field([geom]), probe_receptive_field([geom])) for label, geom in layers]
    if len(layers) > 1:
        stack = [geom for _, geom in layers]
        rows.append(("stack", receptive_field(stack), probe_receptive_field(stack)))
    return rows


class ReceptiveFieldStage(BaseStage):
    """Prints and saves the receptive-field table."""

    def __init__(self, config: Dict[str, Any], run_state: RunState, layers: str):
        super().__init__("ReceptiveField", config, run_state)
        self.layers = layers

    def run(self) -> Dict[str, Any]:
        rows = rf_table(parse_rf_layers(self.layers))
        lines = [f"{'layer':<20}{'rf':>6}{'probed':>8}"]
        lines += [f"{label:<20}{rf:>6}{probed:>8}" for label, rf, probed in rows]
        text = "\n".join(lines) + "\n"
        self.run_state.path("rf.txt").write_text(text)
        print(text, end="")
        mismatches = [label for label, rf, probed in rows if rf != probed]
        if mismatches:
            self.logger.warning(f"Impulse probe disagrees with the analytic field for: {mismatches}")
        return {"rows": len(rows), "mismatches": len(mismatches)}
