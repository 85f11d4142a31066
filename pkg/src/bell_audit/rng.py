"""
Seeding for reproducible, block-parallel trial generation.

Every block of trials draws from its own Philox stream derived from
(seed, stream, block), so the generated sequence does not depend on how
many workers produce it.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_UINT64_LIMIT = 2**64


@dataclass(frozen=True)
class RngSeed:
    """Root seed and substream index of a simulation run."""
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            value = getattr(self, name)
            if not 0 <= value < _UINT64_LIMIT:
                raise ValidationError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def block_generator(self, block: int) -> np.random.Generator:
        """Generator for trial block `block` (0-based)."""
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream, block))
        return np.random.Generator(np.random.Philox(sequence))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "stream": self.stream}
