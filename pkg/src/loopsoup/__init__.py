"""Markov loop soups on finite graphs: exact determinant identities, samplers and a verification harness."""

__version__ = "0.1.0"

from .energy import (
    DELTA,
    Current,
    EnergyForm,
    GreenKernel,
    InvalidEnergyForm,
    SingularEnergyForm,
    TransferMatrix,
    build_energy,
    green,
    green_chi,
    green_killed,
    hitting_matrix,
    resurrected_green,
    trace_energy,
    transfer_matrix,
    transition_matrix,
    twisted_green,
)
from .loops import DiscreteLoop, LoopEnsemble, LoopSample, OccupationField, sample_nontrivial_loop, sample_soup, sample_soups
from .paths import Path, SpanningTree, loop_erase, sample_bridge, sample_path_to_death, wilson
from .gff import GaussField, sample_field
from .stats import Estimate

__all__ = [
    "DELTA",
    "Current",
    "DiscreteLoop",
    "EnergyForm",
    "Estimate",
    "GaussField",
    "GreenKernel",
    "InvalidEnergyForm",
    "LoopEnsemble",
    "LoopSample",
    "OccupationField",
    "Path",
    "SingularEnergyForm",
    "SpanningTree",
    "TransferMatrix",
    "build_energy",
    "green",
    "green_chi",
    "green_killed",
    "hitting_matrix",
    "loop_erase",
    "resurrected_green",
    "sample_bridge",
    "sample_field",
    "sample_nontrivial_loop",
    "sample_path_to_death",
    "sample_soup",
    "sample_soups",
    "trace_energy",
    "transfer_matrix",
    "transition_matrix",
    "twisted_green",
    "wilson",
]
