from purebox.zoo.archs import FAMILIES, ArchSpec, build_model
from purebox.zoo.handle import ClassifierHandle, TrainConfig, lr_at
from purebox.zoo.pgd import BallViolation, pgd
from purebox.zoo.training import (
    TrainData,
    adversarial_train,
    best_epoch,
    evaluate_accuracy,
    set_deterministic,
    train_classifier,
)
