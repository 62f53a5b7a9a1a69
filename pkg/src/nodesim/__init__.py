"""Simulator and pulse compiler for a cavity-coupled electron-nuclear spin node."""

from .cavity import CavityParams, FieldConfig, ReadoutModel, cooperativity, find_contrast_frequency, reflection_amplitude
from .core import DensityMatrix, HilbertSpace, concurrence, fidelity_pure, partial_trace, tensor
from .engine import NoiseModel, coherence_time, decay_envelope, simulate_sequence
from .hyperfine import (
    REFERENCE_HYPERFINE,
    HyperfineParams,
    SynthesizedGate,
    conditional_rotation,
    find_resonances_numeric,
    resonance_time,
    synthesize_cnot,
    unconditional_rotation,
)
from .protocols import TimeBinQubit, bell_protocol, distribution_range, heralded_storage, teleport_photon
from .sequence import MWRotation, OpticalPump, PulseSequence, Readout, Wait, XY8Block

__all__ = [
    "CavityParams",
    "FieldConfig",
    "ReadoutModel",
    "cooperativity",
    "find_contrast_frequency",
    "reflection_amplitude",
    "DensityMatrix",
    "HilbertSpace",
    "concurrence",
    "fidelity_pure",
    "partial_trace",
    "tensor",
    "NoiseModel",
    "coherence_time",
    "decay_envelope",
    "simulate_sequence",
    "REFERENCE_HYPERFINE",
    "HyperfineParams",
    "SynthesizedGate",
    "conditional_rotation",
    "find_resonances_numeric",
    "resonance_time",
    "synthesize_cnot",
    "unconditional_rotation",
    "TimeBinQubit",
    "bell_protocol",
    "distribution_range",
    "heralded_storage",
    "teleport_photon",
    "MWRotation",
    "OpticalPump",
    "PulseSequence",
    "Readout",
    "Wait",
    "XY8Block",
]
