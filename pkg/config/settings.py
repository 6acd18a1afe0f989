"""
Rarefy — Application Settings & Constants
Paths, training defaults, oracle limits, and exit codes.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# ─────────────────────────────────────────────────────────────
# App Identity
# ─────────────────────────────────────────────────────────────
APP_TITLE = "Rarefy"
APP_SUBTITLE = "Budgeted rare-class generative modeling for black-box packet spaces"

# ─────────────────────────────────────────────────────────────
# Paths
# ─────────────────────────────────────────────────────────────
PROJECT_ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = PROJECT_ROOT / "data"
SCHEMA_DIR = DATA_DIR / "schemas"
CALIBRATION_DIR = DATA_DIR / "calibration"
DEFAULT_OUTPUT_DIR = Path(os.getenv("RAREFY_OUTPUT_DIR", str(PROJECT_ROOT / "runs")))

# Artifact file names inside an output directory
CHECKPOINT_NAME = "checkpoint.json"
STAGE_METRICS_NAME = "stage_metrics.csv"
STAGE_CHART_NAME = "stage_metrics.html"
STAGE_TIMING_NAME = "stage_timing.csv"     # wall-clock and memory; differs between identical runs
TRANSCRIPT_NAME = "oracle_transcript.jsonl"
EVAL_CSV_NAME = "eval_reports.csv"
ABLATION_CSV_NAME = "ablation.csv"
RUN_CONFIG_NAME = "run_config.json"

# ─────────────────────────────────────────────────────────────
# Logging
# ─────────────────────────────────────────────────────────────
VERBOSE = os.getenv("RAREFY_VERBOSE", "true").lower() == "true"

# ─────────────────────────────────────────────────────────────
# Network engine
# ─────────────────────────────────────────────────────────────
ADAM_LR = 1e-3
ADAM_BETA1 = 0.5
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CLIP_VALUE = 0.01            # Wasserstein weight clipping
GP_LAMBDA = 10.0             # gradient-penalty coefficient
GP_FD_STEP = 1e-4            # finite-difference step for the penalty's Hessian-vector product
GUMBEL_TEMPERATURE = 0.5
CHECKPOINT_FORMAT = "rarefy-checkpoint"
CHECKPOINT_VERSION = 1

# ─────────────────────────────────────────────────────────────
# Oracle
# ─────────────────────────────────────────────────────────────
ENUMERATION_CAP = 2 ** 24
GROUND_TRUTH_SAMPLES = 1_000_000     # uniform+filter fallback above the cap

# ─────────────────────────────────────────────────────────────
# Trainer
# ─────────────────────────────────────────────────────────────
DEFAULT_BUDGET = 2000
DEFAULT_STAGES = 2
DEFAULT_WEIGHT = 3.0
DEFAULT_NORMALIZATION = 1.0
DEFAULT_ITERATIONS = 2000
DEFAULT_BATCH = 64
DEFAULT_LATENT_DIM = 16
DEFAULT_HIDDEN = (128, 128)
DEFAULT_CANDIDATE_POOL = 100_000
N_CRITIC = {"wasserstein": 5, "js": 1}
LOG_CLAMP = 1e-12


class LossFamily:
    JS = "js"
    WASSERSTEIN = "wasserstein"


class SelectionPolicy:
    LEAST_CONFIDENT = "least-confident"
    MOST_CONFIDENT = "most-confident"     # ALCG-style comparison
    RANDOM = "random"


class Lipschitz:
    CLIP = "clip"
    GRADIENT_PENALTY = "gradient-penalty"


class Baseline:
    NONE = "none"
    RARE_ONLY = "rare-only"           # generator trained on labeled rare packets only


class AlphaSource:
    FIRST_STAGE = "first-stage"       # random-policy labels only
    ALL_LABELS = "all-labels"


# ─────────────────────────────────────────────────────────────
# Evaluation
# ─────────────────────────────────────────────────────────────
DEFAULT_EVAL_SAMPLES = 50_000
MAX_EVAL_SAMPLES = 500_000
DEFAULT_SEEDS = (1, 2, 3, 4, 5)

# U = unlabeled samples, A = active learning, W = weighted loss.
# Active learning only makes sense with unlabeled samples → 6 combinations.
ABLATION_COMPONENTS = {
    "base":  {"use_unlabeled": False, "active_learning": False, "weighted_loss": False},
    "W":     {"use_unlabeled": False, "active_learning": False, "weighted_loss": True},
    "U":     {"use_unlabeled": True,  "active_learning": False, "weighted_loss": False},
    "UW":    {"use_unlabeled": True,  "active_learning": False, "weighted_loss": True},
    "UA":    {"use_unlabeled": True,  "active_learning": True,  "weighted_loss": False},
    "UAW":   {"use_unlabeled": True,  "active_learning": True,  "weighted_loss": True},
}

# ─────────────────────────────────────────────────────────────
# CLI exit codes
# ─────────────────────────────────────────────────────────────
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

# ─────────────────────────────────────────────────────────────
# Reference numbers (real DNS infrastructure, not reproducible here)
# ─────────────────────────────────────────────────────────────
REFERENCE_RESULTS = {
    "dns_fidelity_proposed": 4.16,
    "dns_fidelity_ampmap": 16.60,
    "dns_diversity_ampmap": 0.0168,
    "dns_alpha": 0.00776,
    "fivetuple_alpha": 0.01150,
}
