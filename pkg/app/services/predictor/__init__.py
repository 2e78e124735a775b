from .layers import softmax, log_softmax
from .model import MaskPredictor, PolicyModel, build_policy_model
from .optim import AdamW
from .training import (
    ModelState,
    TrainResult,
    TrainingArrays,
    build_training_arrays,
    chunk_actions,
    evaluation_loss,
    loss_and_grads,
    new_state,
    planned_steps,
    split_episodes,
    train,
)
