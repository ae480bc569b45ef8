"""Benchmark problems: linear-Gaussian and nonlinear toys, elliptic PDE, PET."""

from .base import Problem, make_truth_and_data, normalized_problem
from .elliptic import EllipticForwardModel, elliptic_problem
from .pet import PetForwardModel, pet_geometry, pet_problem
from .toys import exp_toy_problem, linear_gaussian_posterior, linear_gaussian_problem, poisson_toy_problem

__all__ = [
    "EllipticForwardModel",
    "PetForwardModel",
    "Problem",
    "elliptic_problem",
    "exp_toy_problem",
    "linear_gaussian_posterior",
    "linear_gaussian_problem",
    "make_truth_and_data",
    "normalized_problem",
    "pet_geometry",
    "pet_problem",
    "poisson_toy_problem",
]
