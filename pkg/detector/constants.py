
# Label used for detections that are objects but not a known category
UNKNOWN = -1

# Decode defaults
DEFAULT_STRIDE = 8
DEFAULT_EMBED_DIM = 32
DEFAULT_SCORE_THRESH = 0.3
DEFAULT_NMS_THRESH = 0.5
DEFAULT_TOPK = 100
DEFAULT_UNKNOWN_MARGIN = 0.5

# Initial objectness probability
PRIOR_PROB = 0.01

# Fraction of a box (per side length) whose center region makes cells positive
CENTER_REGION = 0.5

CHECKPOINT_FORMAT_VERSION = 1
