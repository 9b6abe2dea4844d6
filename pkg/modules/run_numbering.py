"""
Run numbering utilities - manage sequential run directories
"""

import json
import os

from rich import print


def get_run_counter_file(runs_dir):
    """Get path to the run counter file."""
    return os.path.join(runs_dir, ".run_counter.json")


def load_counters(runs_dir):
    """Load run counters from file."""
    counter_file = get_run_counter_file(runs_dir)

    if os.path.exists(counter_file):
        try:
            with open(counter_file, "r") as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError):
            pass

    # Default counters
    return {"data": 0, "train": 0, "eval": 0, "sweep": 0}


def save_counters(runs_dir, counters):
    """Save run counters to file."""
    counter_file = get_run_counter_file(runs_dir)
    try:
        with open(counter_file, "w") as f:
            json.dump(counters, f, indent=2, sort_keys=True)
    except OSError as e:
        print(f"[yellow]⚠️ Could not save run counters: {e}[/yellow]")


def get_next_run_number(runs_dir, category):
    """
    Get next sequential run number for a category.

    Args:
        runs_dir: Base runs directory
        category: 'data', 'train', 'eval' or 'sweep'

    Returns:
        int: Next run number
    """
    os.makedirs(runs_dir, exist_ok=True)
    counters = load_counters(runs_dir)
    counters[category] = counters.get(category, 0) + 1
    save_counters(runs_dir, counters)
    return counters[category]


def get_run_dir(runs_dir, category):
    """
    Create the next numbered run directory, e.g. runs/train/run_3.

    Numbers whose directory already exists are skipped.

    Returns:
        tuple: (directory, run_number)
    """
    while True:
        run_num = get_next_run_number(runs_dir, category)
        run_dir = os.path.join(runs_dir, category, f"run_{run_num}")
        if not os.path.exists(run_dir):
            os.makedirs(run_dir)
            return run_dir, run_num
