"""Small shared helpers."""

import os


def worker_count(default: int = 4) -> int:
    """Worker cap for parallel sweeps; DEFORM_SWARM_THREADS overrides."""
    env = os.environ.get("DEFORM_SWARM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(default, os.cpu_count() or 1))
