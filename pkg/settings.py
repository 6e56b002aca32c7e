DEFAULT_CANVAS = 128
DEFAULT_FRAMES = 7
FULL_CANVAS = 512

CONSISTENCY_TOL_ABS = 0.5
CONSISTENCY_TOL_REL = 0.01

MAX_FLO_DIM = 2**16
FLO_MAGIC = 202021.25

OUTPUT_ROOT_ENV = "ACCFLOW_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "./output"
