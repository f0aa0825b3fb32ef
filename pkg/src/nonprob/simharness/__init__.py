from .engine import EstimatorSummary, McSummary, ScenarioConfig, population_for, run_replicate, run_scenario
from .presets import PRESETS, preset
from .suite import SUITE
