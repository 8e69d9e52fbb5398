"""Learning piecewise physical theories from raw trajectories.

Competing predictor/classifier pairs are trained by differentiable
divide-and-conquer, simplified into symbolic rules by description-length
minimization, merged into parameterized master theories and kept in a
persistent hub that seeds later learning.
"""

from . import autodiff, boundary, ddac, hub, pipeline, razor, symbolic, theory, unify, worldgen
from .boundary import BoundaryConfig, boundary_pass
from .ddac import TrainConfig, ddac as train
from .hub import TheoryHub
from .pipeline import RunConfig, run_pipeline
from .razor import RazorConfig, SymbolicTheory, occams_razor
from .theory import Theory, TheorySet
from .unify import MasterTheory, unify as unify_theories

__version__ = "0.1.0"

__all__ = [
    "BoundaryConfig", "MasterTheory", "RazorConfig", "RunConfig", "SymbolicTheory", "Theory", "TheoryHub",
    "TheorySet", "TrainConfig", "autodiff", "boundary", "boundary_pass", "ddac", "hub", "occams_razor",
    "pipeline", "razor", "run_pipeline", "symbolic", "theory", "train", "unify", "unify_theories", "worldgen",
]
