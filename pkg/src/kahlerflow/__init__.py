"""Complex normalizing flows on C² with Kähler-geometric diagnostics."""

from kahlerflow.continuous import ContinuousFlow, VelocityNet, divergence_exact, integrate, kinetic_energy
from kahlerflow.datasets import Dataset, make_dataset, sample_complex_gaussian
from kahlerflow.estimators import ComplexFlowDensity, ContinuousComplexFlowDensity
from kahlerflow.flow import FlowStack, base_log_prob
from kahlerflow.layers import ComplexLinear, CouplingLayer, cgelu
from kahlerflow.training import Diverged, TrainConfig, train

__version__ = "0.1.0"

__all__ = ["ComplexFlowDensity", "ContinuousComplexFlowDensity", "ComplexLinear", "ContinuousFlow",
           "CouplingLayer", "Dataset", "Diverged", "FlowStack", "TrainConfig", "VelocityNet",
           "base_log_prob", "cgelu", "divergence_exact", "integrate", "kinetic_energy",
           "make_dataset", "sample_complex_gaussian", "train"]
