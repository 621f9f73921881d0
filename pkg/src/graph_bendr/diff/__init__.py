import math

import numpy as np
import torch

from .checkpoint import Checkpoint
from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .optim import Adam, NonFiniteGradient, adam_step
from .rng import RngStreams, seed_rng


def uniform_init(param: torch.nn.Parameter, fan_in: int, rng: np.random.Generator) -> None:
    """Fill ``param`` with U(-sqrt(1/fan_in), +sqrt(1/fan_in)) drawn from ``rng``."""
    bound = math.sqrt(1.0 / fan_in)
    values = rng.uniform(-bound, bound, size=tuple(param.shape))
    with torch.no_grad():
        param.copy_(torch.from_numpy(values).to(param.dtype))


def zeros_init(param: torch.nn.Parameter) -> None:
    with torch.no_grad():
        param.zero_()


__all__ = [
    "Adam",
    "Checkpoint",
    "GradCheckError",
    "GradCheckReport",
    "NonFiniteGradient",
    "RngStreams",
    "adam_step",
    "grad_check",
    "seed_rng",
    "uniform_init",
    "zeros_init",
]
