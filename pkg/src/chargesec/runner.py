"""Scenario execution: config in, trace and verdicts out."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import flows
from .engine import World
from .model import ScenarioConfig
from .trace import Trace
from .verdict import Report, check_all


@dataclass
class RunResult:
    config: ScenarioConfig
    trace: Trace
    report: Report
    step_results: list
    world: World

    @property
    def any_violated(self) -> bool:
        return self.report.any_violated


def run_scenario(config: ScenarioConfig, seed: int | None = None,
                 trace_path: str | Path | None = None) -> RunResult:
    """Execute every step of a scenario and grade the trace.

    The verdicts are computed from the frozen trace, not from engine
    state, so a written trace file re-verifies to the same report.
    """
    world = World(config, seed=seed)
    step_results = []
    for step in config.steps:
        step_results.append(flows.run_step(world, step))
    world.drain_standalone_actions()
    world.trace.finish()
    if trace_path is not None:
        world.trace.write(trace_path)
    trace = world.trace.freeze()
    return RunResult(config, trace, check_all(trace), step_results, world)
