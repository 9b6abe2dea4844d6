"""
Configuration file for the Decision Mamba desk kit
Modify these settings to customize the default behaviour of every command.
Values here are the bottom layer: config files and CLI flags override them.
"""

import os

# Optional .env overrides (DMAMBA_RUNS_DIR, DMAMBA_LOG_LEVEL)
try:
    from dotenv import load_dotenv

    load_dotenv()
except ImportError:
    pass  # dotenv not installed, plain environment variables still apply

# Base directory (automatically detected)
BASE_DIR = os.getcwd()

# Directory paths
RUNS_DIR = os.getenv("DMAMBA_RUNS_DIR", os.path.join(BASE_DIR, "runs"))

LOG_LEVEL = os.getenv("DMAMBA_LOG_LEVEL", "WARNING")

# Network defaults (N=16 and E=2 follow the reference Mamba block)
DEFAULT_N_LAYERS = 2  # gym preset uses 3
DEFAULT_EMBED_DIM = 64  # gym preset uses 128
DEFAULT_SSM_STATE = 16
DEFAULT_EXPAND = 2
DEFAULT_CONV_KERNEL = 4
DEFAULT_CONTEXT_LENGTH = 10  # gym preset uses 20
DEFAULT_DROPOUT = 0.1
DEFAULT_MAX_TIMESTEP = 1000
DEFAULT_SCAN_MODE = "sequential"

# Training defaults, desk-scaled from the gym preset
DEFAULT_BATCH_SIZE = 64
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_WEIGHT_DECAY = 1e-4
DEFAULT_WARMUP_STEPS = 500  # 10% of updates, as in the 1e4 / 1e5 gym schedule
DEFAULT_TOTAL_UPDATES = 5000  # gym preset uses 1e5
DEFAULT_GRAD_CLIP = 0.25
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_ADAM_EPS = 1e-8
DEFAULT_LR_DECAY = "linear_warmup"
COSINE_FLOOR = 0.1  # warmup_cosine decays to 10% of the base rate

# Evaluation defaults
DEFAULT_EVAL_EPISODES = 20
DEFAULT_RTG_SCALE = 1.0
RANDOM_BASELINE_EPISODES = 10000
METRICS_LOG_EVERY = 50

# Toy environment defaults
DEFAULT_ENV = "densechain"
DEFAULT_ENV_N = 6
DEFAULT_HORIZON = 10

# Hyperparameter presets layered under the config file
PRESETS = {
    "desk": {},
    "gym": {
        "n_layers": 3,
        "embed_dim": 128,
        "batch_size": 64,
        "context_length": 20,
        "dropout_p": 0.1,
        "grad_clip": 0.25,
        "weight_decay": 1e-4,
        "lr_decay": "linear_warmup",
        "learning_rate": 1e-3,
        "total_updates": 100000,
        "warmup_steps": 10000,
    },
    "atari": {
        "n_layers": 6,
        "embed_dim": 128,
        "batch_size": 256,
        "context_length": 30,
        "dropout_p": 0.1,
        "learning_rate": 6e-4,
        "betas": [0.9, 0.95],
        "grad_clip": 1.0,
        "weight_decay": 0.1,
        "lr_decay": "warmup_cosine",
    },
}

# Atari reference scores (random, expert, DMamba raw mean) used by `score --game`
ATARI_SCORES = {
    "breakout": {"random": 1.7, "expert": 30.5, "raw": 70.6},
    "qbert": {"random": 163.9, "expert": 13455.0, "raw": 5780.0},
    "pong": {"random": -20.7, "expert": 14.6, "raw": 1.6},
    "seaquest": {"random": 68.4, "expert": 42054.7, "raw": 1006.0},
}
