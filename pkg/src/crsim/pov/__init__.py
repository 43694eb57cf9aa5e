"""POV generation strategies."""

from .engine import (
    STRATEGIES,
    ExecutorFailure,
    GeneratorScript,
    MissingOutputs,
    NoCodeBlock,
    PovStrategyConfig,
    build_feedback,
    build_initial_prompt,
    call_path_prompt_rounds,
    execute_harness,
    extract_generator_script,
    rank_reachable_functions,
    run_generator,
    run_pov_strategy,
    strategy_config,
    truncate_output,
)

__all__ = [
    "STRATEGIES", "ExecutorFailure", "GeneratorScript", "MissingOutputs", "NoCodeBlock", "PovStrategyConfig",
    "build_feedback", "build_initial_prompt", "call_path_prompt_rounds", "execute_harness",
    "extract_generator_script", "rank_reachable_functions", "run_generator", "run_pov_strategy",
    "strategy_config", "truncate_output",
]
