import logging
import os

import numpy as np
from rich import print
from rich.logging import RichHandler

# Named random streams; every one is derived from the single run seed.
RNG_STREAMS = {"data": 0, "init": 1, "dropout": 2, "eval": 3, "gen": 4, "baseline": 5}


def ensure_dir(path, quiet=False):
    """Ensure directory exists, create if it doesn't."""
    if not os.path.exists(path):
        os.makedirs(path)
        if not quiet:
            print(f"[green]✓ Created directory: {path}[/green]")
    return path


def make_rng(seed, stream, *extra):
    """Generator for a named stream, e.g. make_rng(0, "eval", episode)."""
    if stream not in RNG_STREAMS:
        raise KeyError(f"unknown random stream '{stream}'")
    entropy = [int(seed), RNG_STREAMS[stream], *(int(e) for e in extra)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def setup_logging(level=None):
    """Route the logging tree through rich; level from argument or DMAMBA_LOG_LEVEL."""
    if level is None:
        from config import LOG_LEVEL

        level = LOG_LEVEL
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.WARNING)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        force=True,
    )
    return logging.getLogger("dmamba")


def format_size(path):
    """Human-readable size of a written file."""
    size_kb = os.path.getsize(path) / 1024
    return f"{size_kb:.2f} KB"
