"""Experiment orchestration: configs, the grid runner, the results store and the leaderboard."""
from .config import ConfigError, ExperimentConfig, config_from_dict, config_hash, load_config, resolve_variants
from .leaderboard import LeaderboardError, render_leaderboard, select_best
from .reference import APC_IMPROVEMENT, EXPECTED_STATS, reference_results, reference_rows
from .runner import ExperimentOutcome, prepare_data, run_experiment, verify_dataset
from .store import RunResult, StoreError, persist, read_store
