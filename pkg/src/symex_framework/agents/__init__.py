"""
Agent stages, backends and the per-file pipeline
"""

from .backends import AgentBackend, RemoteBackend, RuleBasedBackend, SingleAgentBackend, make_backend
from .pipeline import (
    AgentPipeline,
    PipelineOutcome,
    assess_safety,
    generate_wrapper,
    plan_analysis,
    replay_output_dir,
    run_pipeline,
    select_params,
)

__all__ = [
    "AgentBackend",
    "AgentPipeline",
    "PipelineOutcome",
    "RemoteBackend",
    "RuleBasedBackend",
    "SingleAgentBackend",
    "assess_safety",
    "generate_wrapper",
    "make_backend",
    "plan_analysis",
    "replay_output_dir",
    "run_pipeline",
    "select_params",
]
