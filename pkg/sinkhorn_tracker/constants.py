# sinkhorn_tracker/constants.py
"""
Centralized constants for the tracker.
These values are used across modules so that the CLI, the config loader and
the library defaults never drift apart.
"""

import os

# Logging
DEFAULT_LOG_LEVEL = "INFO"
LOG_LEVEL = os.getenv("SINKHORN_TRACKER_LOG_LEVEL", DEFAULT_LOG_LEVEL)
LOGGER_NAME = "sinkhorn_tracker"

# Association (Sinkhorn + Hungarian)
DEFAULT_S_SLACK = 0.2
DEFAULT_ENTROPIC_L = 5.0
DEFAULT_SINKHORN_ITERS = 8
DEFAULT_S_THRES = 0.2

# Graph construction / tracker lifecycle
DEFAULT_GATE_PX = 200.0
DEFAULT_MIN_CONFIDENCE = 0.5
DEFAULT_MAX_LOST_AGE = 45
DEFAULT_FRAME_WIDTH = 1920.0
DEFAULT_FRAME_HEIGHT = 1080.0

# Network dimensions
DEFAULT_D_APP = 1024
DEFAULT_D_INTER = 128
DEFAULT_GCN_LAYERS = 2

# Training
DEFAULT_LEARNING_RATE = 2e-3
DEFAULT_WEIGHT_DECAY = 1e-3
DEFAULT_BATCH_SIZE = 12
DEFAULT_LOSS_WEIGHT = 10.0
DEFAULT_LOOKBACK = 45
DEFAULT_EPOCHS = 50
DEFAULT_SEED = 0
DEFAULT_SAMPLES_PER_FRAME = 1
DEFAULT_HOLDOUT_FRAMES = 150
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PREDICTION_CLAMP_EPS = 1e-7

# Gradient verification
GRADCHECK_STEP = 1e-5
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_DENOM_FLOOR = 1e-6

# Evaluation
DEFAULT_EVAL_IOU = 0.5
MOSTLY_TRACKED_RATIO = 0.8
MOSTLY_LOST_RATIO = 0.2

# Checkpoint format
CHECKPOINT_MAGIC = b"SKTP"
CHECKPOINT_VERSION = 1

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3
