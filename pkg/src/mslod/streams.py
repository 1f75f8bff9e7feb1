"""Named, reproducible random substreams.

Every random draw in the library comes from a counter-based generator (Philox)
keyed by the master seed plus a fixed integer path. Identical (seed, path)
pairs yield identical draws regardless of evaluation order, worker count, or
which other streams were consumed first. Domain tags are frozen integers;
never renumber them.
"""

import numpy as np

# stream domain tags (frozen)
COEFFICIENT = 1
SAMPLE = 2           # estimator sampling: (SAMPLE, level, sample_index, ...)
STRONG = 3           # strong-study sampling: (STRONG, sample_index, ...)
PILOT = 4            # timing pilots: (PILOT, sample_index, ...)
STUDY_WEAK_MC = 5    # weak-study estimator seeds, one per level
STUDY_WEAK_FEM = 6
STUDY_WEAK_MLMC = 7
STUDY_MLMC_REPORT = 8
TEST = 9


def seed_sequence(master_seed, *path):
    """SeedSequence keyed by the master seed and an integer path."""
    entropy = (int(master_seed),) + tuple(int(p) for p in path)
    return np.random.SeedSequence(entropy=entropy)


def generator(master_seed, *path):
    """Counter-based Generator for the given named substream."""
    return np.random.Generator(np.random.Philox(seed_sequence(master_seed, *path)))


def derive_seed(master_seed, *path):
    """Collapse a named substream into a single 64-bit seed."""
    return int(seed_sequence(master_seed, *path).generate_state(1, dtype=np.uint64)[0])
