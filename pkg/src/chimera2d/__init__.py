"""2D finite element solver for particulate incompressible flow on
overlapping meshes: a fixed background grid plus body-fitted annular
submeshes around rigid disk particles, coupled weakly (interior penalty)
or strongly (hole/fringe interpolation)."""

from .fracstep import FlowState, SolverConfig, SolverError
from .mesh import AnnulusSpec, QuadMesh
from .orchestrator import (
    ConfigError,
    ParticleSpec,
    Simulation,
    SimulationConfig,
    run_simulation,
)
from .rigidbody import Particle

__all__ = [
    "AnnulusSpec",
    "ConfigError",
    "FlowState",
    "Particle",
    "ParticleSpec",
    "QuadMesh",
    "Simulation",
    "SimulationConfig",
    "SolverConfig",
    "SolverError",
    "run_simulation",
]

__version__ = "0.1.0"
