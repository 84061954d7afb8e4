"""Guidance, control and planning toolkit for planar free-flyer testbeds."""
from .dynamics import Disturbance, InertialParams, Model, RigidState
from .kernels import BACKEND
from .nmpc import Controller, OcpProblem, Reference, solve

__version__ = "0.1.0"

__all__ = ["BACKEND", "Controller", "Disturbance", "InertialParams", "Model", "OcpProblem", "Reference",
           "RigidState", "solve", "__version__"]
