import os

# CT intensity window (HU) applied before mapping to [-1, 1]
HU_MIN = float(os.getenv('LIVERSEG_HU_MIN') or -100)
HU_MAX = float(os.getenv('LIVERSEG_HU_MAX') or 240)
BACKGROUND_VALUE = -1.0

DATA_DIR = os.getenv('LIVERSEG_DATA_DIR') or './data'
RUN_DIR = os.getenv('LIVERSEG_RUN_DIR') or './runs'
LOG_LEVEL = (os.getenv('LIVERSEG_LOG_LEVEL') or 'INFO').upper()
DEVICE = os.getenv('LIVERSEG_DEVICE') or 'cpu'

# stage-1 liver presence gate
PRESENCE_THRESHOLD = float(os.getenv('LIVERSEG_PRESENCE_THRESHOLD') or 0.5)
PRESENCE_MIN_PIXELS = int(os.getenv('LIVERSEG_PRESENCE_MIN_PIXELS') or 20)
# fixed liver-box padding used at inference (midpoint of the training range)
INFER_PAD = int(os.getenv('LIVERSEG_INFER_PAD') or 35)

COMPRESSED_CHANNELS = 32
PYRAMID_LEVELS = 5
SIZE_MULTIPLE = 2 ** PYRAMID_LEVELS

CHECKPOINT_FORMAT = 'liverseg-checkpoint'
CHECKPOINT_VERSION = 1
CHECKPOINT_DTYPE = '<f4'

CT_SUFFIX = '_ct'
SEG_SUFFIX = '_seg'
PRED_SUFFIX = '_pred'
NIFTI_EXTS = ('.nii.gz', '.nii')

MANIFEST_NAME = 'manifest.json'
RUN_MANIFEST_NAME = 'run_manifest.json'
TRAIN_LOG_NAME = 'train_log.jsonl'
