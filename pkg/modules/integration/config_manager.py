"""
Configuration management: built-in defaults, preset fragments, YAML/JSON
files and command-line overrides merged into a typed ExperimentConfig.
"""

import copy
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import yaml

from modules.elasticity.elasticity_controller import BoundaryConditions, ElasticityConfig, MaterialParams
from modules.functionals.phase_field import CostWeights, PhaseFieldParams
from modules.integration.errors import (ConfigError, EmptyScenarioError, NegativeWeightError,
                                        ProbabilitySumError)
from modules.integration.presets import geometry_from_dict, preset_config, scenarios_from_dicts
from modules.optimize.continuation_controller import ContinuationConfig
from modules.optimize.nlp_solver import NlpSolverConfig
from modules.stochastic.distribution import PROBABILITY_TOL, SmoothingParams
from modules.stochastic.dominance_controller import DominanceError, DominanceOrder, Scenario

logger = logging.getLogger("ConfigManager")

DEFAULT_PRESET = 'cantilever-equal'


@dataclass
class MeshConfig:
    initial_level: int = 5
    max_level: int = 8
    marking_threshold: float = 1.0
    # cells are refined only while wider than epsilon / cells_per_epsilon
    cells_per_epsilon: float = 1.0
    domain: tuple = (0.0, 0.0, 1.0, 1.0)

    def __post_init__(self):
        self.domain = tuple(float(v) for v in self.domain)
        if len(self.domain) != 4 or self.domain[2] <= self.domain[0] or self.domain[3] <= self.domain[1]:
            raise ValueError(f"Invalid domain {self.domain}")
        if not 0 <= self.initial_level <= self.max_level:
            raise ValueError(f"Need 0 <= initial_level <= max_level, got {self.initial_level}, {self.max_level}")
        if self.marking_threshold <= 0:
            raise ValueError("marking_threshold must be positive")
        if self.cells_per_epsilon <= 0:
            raise ValueError("cells_per_epsilon must be positive")


@dataclass
class SolverConfig:
    linear_solver: str = 'auto'
    rtol: float = 1e-12
    direct_max_unknowns: int = 200000
    max_workers: int = 4
    stage_tol: float = 1e-3
    final_tol: float = 1e-5
    max_stages: int = 20
    max_refinements: Optional[int] = None
    bounds: bool = False
    max_outer_iterations: int = 30
    max_inner_iterations: int = 500
    check_gradients: bool = False
    perimeter_weight: Optional[float] = None
    feasibility_backtracks: int = 12


@dataclass
class BenchmarkConfig:
    source: str = 'generate'
    path: Optional[str] = None
    tol: float = 1e-3
    # generation stops once the volume has come down to this value
    target_volume: Optional[float] = None
    require_convergence: bool = True


@dataclass
class OutputConfig:
    directory: str = 'results'
    stress_threshold: Optional[float] = None
    write_stage_fields: bool = True


DEFAULT_CONFIG: Dict[str, Any] = {
    'preset': None,
    'order': 'first',
    'normalize_probabilities': False,
    'mesh': dataclasses.asdict(MeshConfig()),
    'material': dataclasses.asdict(MaterialParams()),
    'weights': dataclasses.asdict(CostWeights()),
    'phase_field': dataclasses.asdict(PhaseFieldParams()),
    'smoothing': dataclasses.asdict(SmoothingParams()),
    'solver': dataclasses.asdict(SolverConfig()),
    'benchmark': dataclasses.asdict(BenchmarkConfig()),
    'output': dataclasses.asdict(OutputConfig()),
    'geometry': {'dirichlet': [], 'neumann': [], 'pinned': []},
    'scenarios': [],
    'reference_volumes': {},
}
DEFAULT_CONFIG['mesh']['domain'] = list(DEFAULT_CONFIG['mesh']['domain'])


@dataclass
class ExperimentConfig:
    preset: Optional[str]
    order: Optional[DominanceOrder]
    normalize_probabilities: bool
    mesh: MeshConfig
    material: MaterialParams
    weights: CostWeights
    phase_field: PhaseFieldParams
    smoothing: SmoothingParams
    solver: SolverConfig
    benchmark: BenchmarkConfig
    output: OutputConfig
    bc: BoundaryConditions
    scenarios: List[Scenario]
    reference_volumes: Dict[str, float] = field(default_factory=dict)
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    def elasticity_config(self):
        s = self.solver
        return ElasticityConfig(s.linear_solver, s.rtol, s.direct_max_unknowns, s.max_workers)

    def nlp_config(self, max_outer_iterations=None):
        s = self.solver
        return NlpSolverConfig(max_outer_iterations=max_outer_iterations or s.max_outer_iterations,
                               max_inner_iterations=s.max_inner_iterations, check_gradients=s.check_gradients)

    def continuation_config(self):
        s = self.solver
        return ContinuationConfig(stage_tol=s.stage_tol, final_tol=s.final_tol, max_stages=s.max_stages,
                                  max_refinements=s.max_refinements,
                                  marking_threshold=self.mesh.marking_threshold,
                                  cells_per_epsilon=self.mesh.cells_per_epsilon, bounds=s.bounds,
                                  perimeter_weight=s.perimeter_weight, nlp=self.nlp_config())


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(f"Section '{name}' must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"Unknown keys in section '{name}': {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid section '{name}': {e}") from e


class ConfigManager:
    """Loads, merges, validates and exports experiment configurations."""

    def __init__(self):
        self.config: Dict[str, Any] = {}

    def load_config(self, config_path) -> Dict[str, Any]:
        """Read a YAML or JSON file (chosen by extension) into a dict."""
        if not os.path.exists(config_path):
            raise ConfigError(f"Configuration file not found: {config_path}")
        ext = os.path.splitext(config_path)[1].lower()
        try:
            with open(config_path, 'r') as f:
                if ext == '.json':
                    data = json.load(f)
                elif ext in ('.yaml', '.yml'):
                    data = yaml.safe_load(f)
                else:
                    raise ConfigError(f"Unsupported file format: {ext}. Use .json, .yaml, or .yml")
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ConfigError(f"Cannot parse {config_path}: {e}") from e
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError(f"Configuration root must be a mapping in {config_path}")
        logger.info(f"Configuration loaded from {config_path}")
        self.config = data
        return data

    def _deep_merge(self, dict1, dict2):
        """Deep merge two dictionaries; lists and scalars of dict2 replace those of dict1."""
        result = copy.deepcopy(dict1)
        for key, value in dict2.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._deep_merge(result[key], value)
            else:
                result[key] = copy.deepcopy(value)
        return result

    def merged(self, user: Dict[str, Any], overrides: Dict[str, Any] = None) -> Dict[str, Any]:
        """Defaults, then the preset fragment, then the user file, then overrides."""
        user = self._deep_merge(user or {}, overrides or {})
        preset = user.get('preset')
        order = user.get('order', DEFAULT_CONFIG['order'])
        base = DEFAULT_CONFIG
        if preset:
            base = self._deep_merge(base, preset_config(preset, order))
            base['preset'] = preset
        return self._deep_merge(base, user)

    def create_default_config(self) -> Dict[str, Any]:
        """Fully populated default configuration of the default preset."""
        return self.merged({'preset': DEFAULT_PRESET})

    def build(self, data: Dict[str, Any]) -> ExperimentConfig:
        """Validate a merged configuration dict and convert it to typed sections."""
        order = data.get('order')
        if order in (None, 'none'):
            order = None
        else:
            try:
                order = DominanceOrder.parse(order)
            except DominanceError as e:
                raise ConfigError(str(e)) from e

        weights = data.get('weights') or {}
        for key in ('nu', 'eta_weight'):
            if key in weights and not float(weights[key]) > 0:
                raise NegativeWeightError(f"Weight '{key}' must be positive, got {weights[key]}")

        bc = geometry_from_dict(data.get('geometry') or {})
        if not bc.dirichlet:
            raise ConfigError("geometry needs at least one Dirichlet segment")

        items = data.get('scenarios') or []
        if not items:
            raise EmptyScenarioError("at least one scenario required")
        probabilities = [float(item.get('probability', -1.0)) for item in items]
        if any(p < 0 for p in probabilities):
            raise ProbabilitySumError("every scenario needs a nonnegative probability")
        total = sum(probabilities)
        if data.get('normalize_probabilities'):
            if total <= 0:
                raise ProbabilitySumError(f"probabilities sum to {total:.12g}")
            items = [dict(item, probability=p / total) for item, p in zip(items, probabilities)]
        elif abs(total - 1.0) > PROBABILITY_TOL:
            raise ProbabilitySumError(f"probabilities sum to {total:.12g}")
        scenarios = scenarios_from_dicts(items, len(bc.neumann))

        benchmark = _section(BenchmarkConfig, data.get('benchmark') or {}, 'benchmark')
        if benchmark.source not in ('generate', 'file'):
            raise ConfigError(f"Benchmark source must be 'generate' or 'file', got {benchmark.source!r}")
        if benchmark.source == 'file' and not benchmark.path:
            raise ConfigError("Benchmark source 'file' needs a path")

        config = ExperimentConfig(
            preset=data.get('preset'),
            order=order,
            normalize_probabilities=bool(data.get('normalize_probabilities', False)),
            mesh=_section(MeshConfig, data.get('mesh') or {}, 'mesh'),
            material=_section(MaterialParams, data.get('material') or {}, 'material'),
            weights=_section(CostWeights, weights, 'weights'),
            phase_field=_section(PhaseFieldParams, data.get('phase_field') or {}, 'phase_field'),
            smoothing=_section(SmoothingParams, data.get('smoothing') or {}, 'smoothing'),
            solver=_section(SolverConfig, data.get('solver') or {}, 'solver'),
            benchmark=benchmark,
            output=_section(OutputConfig, data.get('output') or {}, 'output'),
            bc=bc,
            scenarios=scenarios,
            reference_volumes=dict(data.get('reference_volumes') or {}),
            raw=data,
        )
        logger.debug(f"Configuration built: preset={config.preset}, order={order}, "
                     f"{len(scenarios)} scenarios")
        return config

    def export_config(self, export_path, data: Dict[str, Any] = None):
        """Write a configuration dict as YAML or JSON (chosen by extension)."""
        data = data if data is not None else self.create_default_config()
        ext = os.path.splitext(export_path)[1].lower()
        if ext == '.json':
            with open(export_path, 'w') as f:
                json.dump(data, f, indent=2, default=str)
        elif ext in ('.yaml', '.yml'):
            with open(export_path, 'w') as f:
                yaml.safe_dump(data, f, default_flow_style=False, sort_keys=False)
        else:
            raise ConfigError(f"Unsupported file format: {ext}. Use .json, .yaml, or .yml")
        logger.info(f"Configuration exported to {export_path}")


def parse_config(path=None, overrides: Dict[str, Any] = None) -> ExperimentConfig:
    """Load a configuration file (or none), apply overrides and return the validated config."""
    manager = ConfigManager()
    user = manager.load_config(path) if path else {}
    return manager.build(manager.merged(user, overrides))


def export_default_config(export_path):
    ConfigManager().export_config(export_path)
