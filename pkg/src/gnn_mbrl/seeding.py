"""Deterministic seed derivation shared by data generation and evaluation."""

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def episode_seed(seed: int, index: int) -> int:
    """Per-episode seed: ``seed XOR splitmix64(index)``."""
    return (seed & MASK64) ^ splitmix64(index)


def derive(seed: int, *tags: int) -> int:
    """Fold integer tags into a seed, e.g. ``derive(ep_seed, step)``."""
    out = seed & MASK64
    for tag in tags:
        out = splitmix64(out ^ (tag & MASK64))
    return out
