
KNOWN = "KNOWN"
UNKNOWN_SPLIT = "UNKNOWN"
SPLITS = (KNOWN, UNKNOWN_SPLIT)

SHAPE_KINDS = ("disc", "square", "triangle", "ring")

# Hue ranges in degrees; red wraps around 0
COLOR_FAMILIES = {
    "red": (-12.0, 12.0),
    "yellow": (45.0, 65.0),
    "green": (105.0, 140.0),
    "blue": (205.0, 245.0),
}

DEFAULT_IMAGE_SIZE = (64, 64)
DEFAULT_INSTANCE_RANGE = (2, 6)
DEFAULT_SIZE_RANGE = (16, 26)
DEFAULT_MAX_PAIR_IOU = 0.2
MAX_PLACEMENT_ATTEMPTS = 1000

BACKGROUND_LEVEL = 40
BACKGROUND_NOISE = 12

# Teacher oracle
TEACHER_DIM = 16
TEACHER_STRIDE = 4
TEACHER_SIGMA = 0.05
PROTOTYPE_SEED = 20240917

# Dataset files
ANNOTATION_FILE = "annotations.json"
IMAGE_DIR = "images"
MASK_DIR = "masks"
DATASET_FORMAT_VERSION = 1
