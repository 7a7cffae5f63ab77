from .adam import AdamState, adam_step
from .pipeline import batch_loss_and_grads, model_input, reconstruct
from .train import History, OptimConfig, TrainingDiverged, evaluate, train_pilot, train_pilot_tsp
from .tsp import brute_force_path, path_length, tsp_greedy

__all__ = [
    "AdamState", "adam_step", "batch_loss_and_grads", "model_input", "reconstruct",
    "History", "OptimConfig", "TrainingDiverged", "evaluate", "train_pilot", "train_pilot_tsp",
    "brute_force_path", "path_length", "tsp_greedy",
]
