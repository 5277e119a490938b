from .config import TrainConfig, load_config
from .optim import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .train import train, evaluate, phantom_dataset, load_dataset

__all__ = [
    "TrainConfig", "load_config", "AdamState", "adam_step",
    "save_checkpoint", "load_checkpoint", "train", "evaluate",
    "phantom_dataset", "load_dataset",
]
