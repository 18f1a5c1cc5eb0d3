"""Named hyperparameter presets and master-seed splitting."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Preset:
    name: str
    p: float | None          # smoothing ratio; None when coarsening is off
    lr: float
    epochs_medium: int
    epochs_large: int

    def epochs(self, scale="medium"):
        if scale not in ("medium", "large"):
            raise ValueError("scale must be 'medium' or 'large'")
        return self.epochs_medium if scale == "medium" else self.epochs_large

    @property
    def coarsening(self) -> bool:
        return self.p is not None


PRESETS = {
    "fast": Preset("fast", 0.1, 0.050, 600, 100),
    "normal": Preset("normal", 0.3, 0.035, 1000, 200),
    "slow": Preset("slow", 0.5, 0.025, 1400, 300),
    "nocoarse": Preset("nocoarse", None, 0.045, 1000, 200),
}

SUBSYSTEMS = ("train", "partition", "split", "eval")


def split_seeds(master: int) -> dict:
    """Expand one master seed into independent per-subsystem seeds.

    Uses numpy's SeedSequence spawning, so the mapping is fixed for a given
    numpy release family and independent of call order.
    """
    children = np.random.SeedSequence(master).spawn(len(SUBSYSTEMS))
    return {name: int(c.generate_state(1)[0]) for name, c in zip(SUBSYSTEMS, children)}
