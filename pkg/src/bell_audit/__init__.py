"""
Bell Audit - Simulation and statistical analysis of photonic Bell tests.

Evaluates the CH-E inequality and its predictability-adapted forms,
generates trials from quantum and local-realist models, and computes
memory-loophole-free p-values by supermartingale analysis.
"""

from .adversaries import AdversaryConfig, QuantumModel, simulate
from .core import CondProbs, CountsTable, SettingsProfile, TrialRecord, che_j
from .martingale import IncrementSpec, ProcessSummary, analyze
from .rng import RngSeed

__version__ = "1.0.0"
__all__ = [
    "AdversaryConfig",
    "CondProbs",
    "CountsTable",
    "IncrementSpec",
    "ProcessSummary",
    "QuantumModel",
    "RngSeed",
    "SettingsProfile",
    "TrialRecord",
    "analyze",
    "che_j",
    "simulate",
]
