from .config import TrainConfig, load_config
from .trainer import PlateauSchedule, train_stage, train_stage1, train_stage2, compute_loss
from .data import Stage1Dataset, Stage2Dataset, sample_stage1_batch
from .ablation import run_ablation, ladder_comparison, ABLATION_CONFIGS
