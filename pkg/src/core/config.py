import os
from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL = os.getenv("ANYTIME_LOG_LEVEL", "INFO")
# Empty string disables the file handler
LOG_FILE = os.getenv("ANYTIME_LOG_FILE", "anytime.log")
REPORT_DIR = os.getenv("ANYTIME_REPORT_DIR", "reports")

# Seeds used when an experiment config does not list its own
_raw_seeds = os.getenv("ANYTIME_DEFAULT_SEEDS", "0,1,2,3,4")
DEFAULT_SEEDS = [int(s) for s in _raw_seeds.split(",") if s.strip()]

EMA_DECAY = float(os.getenv("ANYTIME_EMA_DECAY", "0.9"))
ADALOSS_GAMMA = float(os.getenv("ANYTIME_ADALOSS_GAMMA", "0.05"))
BARRIER_LAMBDA = float(os.getenv("ANYTIME_BARRIER_LAMBDA", "1.0"))

HARNESS_WORKERS = int(os.getenv("ANYTIME_HARNESS_WORKERS", "1"))
