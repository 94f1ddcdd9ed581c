"""Structured schema of a scenario configuration. Composed YAML configs are
merged onto these dataclasses, so unknown keys and wrongly typed values are
rejected before anything runs."""

from dataclasses import dataclass, field
from typing import List, Optional

from omegaconf import MISSING


SCHEMA_VERSION = 1


@dataclass
class ModelConfig:
    _target_: str = "metronome.models.ModelParams"
    n: int = 3
    m: int = 5
    tau: float = 1.0
    q_sq: List[float] = field(
        default_factory=lambda: [2.9394e-10, 1.1785e-16, 4.5574e-35]
    )
    r_sq: float = 1.0e-12


@dataclass
class StateConfig:
    """How a state vector is specified.

    ``constant`` fills every entry with ``value``; ``explicit`` reads the
    ``n m`` entries from ``entries``; ``uniform`` draws every entry from
    ``U(low, high)`` with its own ``seed``.
    """

    kind: str = "constant"
    value: float = 0.0
    entries: Optional[List[float]] = None
    low: Optional[float] = None
    high: Optional[float] = None
    seed: Optional[int] = None


@dataclass
class InitConfig:
    x0: StateConfig = field(default_factory=StateConfig)
    x_hat0: StateConfig = field(default_factory=StateConfig)
    Q0_scale: float = 0.0


@dataclass
class FilterConfig:
    algo: str = "skf"
    gamma: str = "zero"
    gamma_file: Optional[str] = None
    phat0: str = "projected"
    P0_scale: float = 0.1
    P_hat0_scale: float = 0.01


@dataclass
class OptimizerConfig:
    delta1: float = 1.0
    delta2: float = 5.4117
    horizon: int = 1000
    P_hat0_scale: float = 1.0e-4
    step: float = 1.0
    n_probes: int = 10
    probe_seed: int = 0
    rcond: float = 1.0e-10
    probe_rtol: float = 1.0e-6


@dataclass
class RunConfig:
    horizon: int = 1000
    paths: int = 10
    seed: int = MISSING
    threads: int = 1
    equivalence_horizon: int = 200
    lemma_horizon: int = 100
    lemma_p: float = 1.0e-12
    lemma_exponents: List[int] = field(default_factory=lambda: [1, 2])


@dataclass
class OutputsConfig:
    dir: str = "metronome_out"
    traces: bool = True
    filter_runs: bool = True
    moments: bool = True
    adev: bool = True
    confidence_level: float = 0.98
    adev_detrend: str = "none"
    adev_taus: Optional[List[float]] = None


@dataclass
class StudyConfig:
    P_hat0_scales: List[float] = field(default_factory=list)
    delta2_sweep: List[float] = field(default_factory=list)


@dataclass
class ScenarioConfig:
    schema_version: int = SCHEMA_VERSION
    name: str = "scenario"
    debug_mode: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)
    init: InitConfig = field(default_factory=InitConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    run: RunConfig = field(default_factory=RunConfig)
    outputs: OutputsConfig = field(default_factory=OutputsConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
