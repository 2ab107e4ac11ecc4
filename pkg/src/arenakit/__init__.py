"""arenakit: pairwise model-battle arena, rating engine and judge benchmark."""

__version__ = "0.1.0"
