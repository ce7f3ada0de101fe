"""Constants and default configuration."""

import os

# ── World / kinematics ────────────────────────────────────────────
CELL_SIZE = 0.25               # metres per grid cell
FORWARD_STEP = 0.25            # metres per move_forward
TURN_DEG = 30                  # degrees per turn_left / turn_right
MAX_STEPS = 500
SUCCESS_RADIUS = 1.0           # metres, closed boundary
EMBEDDING_DIM = 16

# ── Sensor ────────────────────────────────────────────────────────
FOV_DEG = 90.0
SENSOR_RANGE = 5.0             # metres
NOISE_ANGLE_PER_M = 0.15       # radians of descriptor rotation per metre (std)

# ── Embeddings ────────────────────────────────────────────────────
ATTRIBUTE_WEIGHT = 0.6
INSTANCE_NOISE = 0.15
GROUP_WEIGHT = 0.5             # shared component of related category tokens
TOKEN_GROUPS = {
    "furniture": ("chair", "table", "sofa", "desk", "shelf"),
    "kitchen": ("fridge", "sink", "oven", "microwave"),
    "bathroom": ("toilet", "bathtub", "towel"),
    "bedroom": ("bed", "wardrobe", "lamp"),
}

# ── Relation semantics (ground truth) ─────────────────────────────
NEAR_M = 2.0
BETWEEN_M = 1.0
DIRECTIONAL_RANGE_M = 3.0

# ── Mapping ───────────────────────────────────────────────────────
MERGE_W_GEO = 0.5
MERGE_W_SEM = 0.5
MERGE_THRESHOLD = 0.7
OBSTACLE_DILATION = 2          # cells, frontier band
MIN_FRONTIER_SIZE = 4          # cells
DESCRIBE_ATTRIBUTE_COS = 0.3

# ── Exploration ───────────────────────────────────────────────────
LAMBDA_CU = 0.5
WINDOW_UTILITY_M = 2.0
WINDOW_SEMANTIC_CELLS = 8
BOUND_INF = 0.22
BOUND_SUP = 0.26
CAND_TENTATIVE = 0.80
CAND_CONFIRM = 0.90
APPROACH_M = 1.5
EXPLORATION_MODES = ("full", "no_obj_sem", "no_img_sem", "nearest")

# ── Planning ──────────────────────────────────────────────────────
HORIZON_M = 2.0
HEADING_TOL_DEG = 15.0
PLANNING_INFLATION = 1         # cells of obstacle inflation for the local policy
REPLAN_EVERY = 10              # steps between frontier re-selection
STOP_NEAR_TARGET_M = 0.75      # stop once this close to a confirmed target estimate
COLLISION_CAREFUL_STEPS = 3    # steps steering at the next path cell after a bump

# ── Equilibrium search ────────────────────────────────────────────
ETA = 0.1
KL_WEIGHT = 0.1
ITERS = 5000
POLICY_BIAS = 0.01
EARLY_EXIT_TV = 1e-9
EARLY_EXIT_PATIENCE = 10

# ── Oracles ───────────────────────────────────────────────────────
ORACLE_GAIN = 4.0
ORACLE_SAMPLES = 5
API_KEY_ENV = "VLN_GAME_API_KEY"
REMOTE_BASE_URL = os.environ.get("CONSENSUSNAV_BASE_URL", "https://api.openai.com/v1")
REMOTE_MODEL = os.environ.get("CONSENSUSNAV_MODEL", "gpt-4o-mini")
REMOTE_TEMPERATURE = 1.0
REMOTE_TIMEOUT = 60.0
REMOTE_MAX_IN_FLIGHT = int(os.environ.get("CONSENSUSNAV_MAX_IN_FLIGHT", "4"))
PROMPT_VERSION = "v1"

# ── Retry defaults ────────────────────────────────────────────────
MAX_RETRIES = 3
RETRY_BACKOFF = 1.0  # seconds, doubled per attempt

# ── Harness ───────────────────────────────────────────────────────
VARIANTS = ("clip_only", "generator_only", "ranking", "game")
DEFAULT_VARIANT = "game"
DEFAULT_PARALLEL = 1
DEFAULT_OUT_DIR = "results"
RESULTS_CSV = "results.csv"
SUMMARY_JSON = "summary.json"

# ── Paths ─────────────────────────────────────────────────────────
PACKAGE_DIR = os.path.dirname(os.path.abspath(__file__))
PROMPT_DIR = os.path.join(PACKAGE_DIR, "prompts")
DATA_DIR = os.path.join(PACKAGE_DIR, "data")


def api_key() -> str:
    """Auth token for the remote oracle, read at call time."""
    return os.environ.get(API_KEY_ENV, "")
