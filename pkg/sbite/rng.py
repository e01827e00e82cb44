"""
Deterministic random streams for Monte-Carlo experiments.

Every (experiment, cell, replicate) triple gets its own counter-based Philox
generator keyed from the master seed, so a cell or a single replicate can be
reproduced in isolation and results do not depend on scheduling.
"""

import zlib

from numpy.random import Generator, Philox, SeedSequence


def _label_key(label: str) -> int:
    return zlib.crc32(str(label).encode("utf-8"))


def seed_sequence(seed: int, experiment: str, cell: str = "", replicate: int = 0) -> SeedSequence:
    """SeedSequence with spawn key (crc32(experiment), crc32(cell), replicate)"""
    if replicate < 0:
        raise ValueError(f"replicate must be >= 0, got {replicate}")
    return SeedSequence(entropy=int(seed), spawn_key=(_label_key(experiment), _label_key(cell), int(replicate)))


def stream(seed: int, experiment: str, cell: str = "", replicate: int = 0) -> Generator:
    """
    Generator for one replicate of one experiment cell.

    Example:
        >>> rng = stream(1, "js04", "5:7", 0)
        >>> rng.standard_normal(3)
    """
    return Generator(Philox(seed_sequence(seed, experiment, cell, replicate)))
