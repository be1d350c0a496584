"""Counter-based random streams keyed by (master seed, stream id)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _key(seed: int, stream_id: tuple[int, ...]) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=stream_id)
    return ss.generate_state(2, dtype=np.uint64)


@dataclass
class RngStream:
    """Philox stream; (seed, stream_id, counter) fixes every draw.

    Distinct ids give independent keys. The stream advances as it is used;
    rebuild it from the same triple to replay.
    """

    seed: int
    stream_id: tuple[int, ...] = ()
    counter: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        self.stream_id = tuple(int(i) for i in self.stream_id)
        bitgen = np.random.Philox(key=_key(self.seed, self.stream_id), counter=self.counter)
        self._gen = np.random.Generator(bitgen)

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def child(self, i: int) -> RngStream:
        """Independent sub-stream for work item ``i``."""
        return RngStream(self.seed, (*self.stream_id, int(i)))

    def replay(self) -> RngStream:
        return RngStream(self.seed, self.stream_id, self.counter)
