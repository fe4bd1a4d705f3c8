"""
Simulator configuration. Edit these values to change the built-in defaults.
Scenario files and CLI flags override most of them; see README.md for the precedence rules.
"""
import math
import os
from pathlib import Path

from dotenv import load_dotenv

# Load .env from project root (so it works no matter where you run the tool from)
_project_root = Path(__file__).resolve().parent.parent
load_dotenv(_project_root / ".env")

TOOL_VERSION = "0.3.0"

# -----------------------------------------------------------------------------
# Files and versions
# -----------------------------------------------------------------------------

SCENARIO_SCHEMA_VERSION = 1
MESSAGE_SCHEMA_VERSION = 1
MODEL_FILE_VERSION = 1

PROFILES_PATH = Path(__file__).resolve().parent / "profiles.json"
REFERENCE_SCENARIO_PATH = _project_root / "scenarios" / "reference.json"

# Default seed when --seed is not given on the command line.
DEFAULT_SEED = int(os.environ.get("LAE_SIM_SEED", "0"))

# Where the CLI writes models, reports, CSVs and the manifest when --out is absent.
DEFAULT_OUT_DIR = os.environ.get("LAE_SIM_OUT_DIR", "out")

# -----------------------------------------------------------------------------
# Logging (you can change the path if you prefer)
# -----------------------------------------------------------------------------

LOG_FILE_PATH = os.environ.get("LAE_SIM_LOG_FILE", "logs/app.log")
LOG_LEVEL = os.environ.get("LAE_SIM_LOG_LEVEL", "INFO").upper().strip()

# -----------------------------------------------------------------------------
# World and mission
# -----------------------------------------------------------------------------

# Minimum horizontal separation between UAVs, in meters. Used at spawn and in the separation check.
D_SAFE = 10.0

# Rejection-sampling budget per agent when placing the swarm in the start zone.
SPAWN_MAX_RETRIES = 1000

# Footprint redraws allowed per building when the generator hits a keep-out box.
GENERATOR_MAX_RETRIES = 200

# -----------------------------------------------------------------------------
# Radio propagation (log-distance path loss + correlated shadowing)
# -----------------------------------------------------------------------------

PL0_DB = 30.0
D0_M = 1.0
N_LOS = 2.2
N_NLOS = 3.5
NLOS_EXTRA_DB = 20.0
SHADOW_SIGMA_LOS_DB = 4.0
SHADOW_SIGMA_NLOS_DB = 6.0
SHADOW_CORR_LEN_M = 50.0
NOISE_POWER_DBM = -94.0

# -----------------------------------------------------------------------------
# Semantic terrain rApp
# -----------------------------------------------------------------------------

# Coarse factor k: one semantic cell covers k x k world cells.
SEMANTIC_COARSE_FACTOR = 4

# Cells at or above this height count as "built" for the density feature.
H_BUILT_M = 5.0

# Noise scale in the confidence metric: conf = (1 - missing) * exp(-noise_sigma / sigma_ref).
CONFIDENCE_SIGMA_REF_M = 10.0

GATE_THRESHOLD = 0.6

# -----------------------------------------------------------------------------
# Network architectures (hidden layers only; input/output sizes come from the scenario)
# -----------------------------------------------------------------------------

ACTOR_HIDDEN = (128, 128)
CRITIC_HIDDEN = (256, 256)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Denominator floor for elementwise gradient-check errors.
GRADCHECK_FLOOR = 1e-2

# -----------------------------------------------------------------------------
# Agent environment
# -----------------------------------------------------------------------------

# Action bounds per control tick: heading change (rad), altitude change (m), distance (m).
D_HEADING_MAX = math.pi / 4
D_ALT_MAX = 5.0
DIST_MAX = 20.0

SEMANTIC_PATCH_K = 5
NEIGHBORS_M = 3
SEMANTIC_FEATURES = 4

# SINR normalization window for observations, dB.
SINR_OBS_LO_DB = -10.0
SINR_OBS_HI_DB = 30.0

# -----------------------------------------------------------------------------
# Reward shaping
# -----------------------------------------------------------------------------

W_PROGRESS = 1.0
W_SINR = 0.5
W_ALTITUDE = 0.1
C_COLLISION = 5.0
C_OBSTACLE = 10.0
C_AREA = 1.0
B_REACH = 10.0
C_UNREACH = 5.0
S_QOS_DB = 0.0
S_HI_DB = 30.0
DIST_NORM_M = 20.0

# -----------------------------------------------------------------------------
# MADDPG xApp
# -----------------------------------------------------------------------------

GAMMA = 0.99
TAU = 0.005
LR_ACTOR = 1e-4
LR_CRITIC = 1e-3
BATCH_SIZE = 128
BUFFER_CAPACITY = 100_000
# Rows the replay ring allocates up front; it doubles on demand up to BUFFER_CAPACITY.
REPLAY_INITIAL_ROWS = 1024
WARMUP_TRANSITIONS = 1000
NOISE_SIGMA_START = 0.2
NOISE_SIGMA_END = 0.02
UPDATE_EVERY = 1
TRAIN_EPISODES = 2000

# Paired evaluation episodes used by eval/compare when not given.
EVAL_EPISODES = 20

# -----------------------------------------------------------------------------
# RIC clocks (milliseconds)
# -----------------------------------------------------------------------------

# Non-RT loop runs at 1 s and above; Near-RT between 10 ms and 1 s.
T_A1_MIN_MS = 1000
T_E2_MIN_MS = 10
T_E2_MAX_MS = 1000

T_A1_MS = 10_000
T_E2_MS = 100
INFERENCE_LATENCY_MS = 10
CONTROL_DEADLINE_MS = 500

DEFAULT_PROFILE = "delivery"
