"""Self-organized criticality in hydraulic fracture: a damaging poroelastic lattice,
avalanche statistics, a debonding beam and closed-form KGD asymptotics."""
from .beam import BeamConfig, CohesiveLaw, run_beam
from .damage import SeededRng, TrussState
from .kgd import KgdParams, kgd_cmod, kgd_length, kgd_pcm
from .lattice import LatticeGrid, LatticeModel, MaterialParams
from .scenario import ScenarioConfig, run_scenario
from .stats import fit_power_law, size_distribution

__version__ = "0.1.0"

__all__ = [
    "BeamConfig", "CohesiveLaw", "run_beam", "SeededRng", "TrussState", "KgdParams", "kgd_cmod",
    "kgd_length", "kgd_pcm", "LatticeGrid", "LatticeModel", "MaterialParams", "ScenarioConfig",
    "run_scenario", "fit_power_law", "size_distribution",
]
