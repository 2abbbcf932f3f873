from purebox.genattack.generator import (
    DEFAULT_BUDGET,
    GeneratorHandle,
    GeneratorSpec,
    PerturbationNet,
    build_generator,
    parameter_count,
)
from purebox.genattack.noise import NoiseMode, sample_noise
from purebox.genattack.perturbation import (
    Perturbation,
    apply_perturbation,
    apply_perturbation_batch,
    generate_perturbation,
    generate_perturbations,
)
from purebox.genattack.train import fooling_loss, train_generator
