"""Lifted hybrid variational inference for factor graphs with mixed domains."""
from .fit import FitConfig, FitResult, fit
from .graph import Continuous, Discrete, FactorDecl, FactorGraph, VariableDecl, build_graph, condition
from .lifting import color_passing, lift
from .optimizer import OptimConfig, minimize
from .variational import MixtureMeanField, ObjectiveSpec

__all__ = [
    "Continuous", "Discrete", "FactorDecl", "FactorGraph", "VariableDecl", "build_graph", "condition",
    "color_passing", "lift", "FitConfig", "FitResult", "fit", "OptimConfig", "minimize",
    "MixtureMeanField", "ObjectiveSpec",
]
__version__ = "0.1.0"
