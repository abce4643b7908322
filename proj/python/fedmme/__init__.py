"""Python bindings for the fedmme one-shot multi-modal federated ensemble simulator."""

import json

from ._core import *  # noqa: F401,F403
from ._core import ExperimentReport, PartitionPlan

__all__ = [name for name in dir() if not name.startswith("_")]


def report_dict(report: ExperimentReport) -> dict:
    """The report as a plain dict (same content as report.json)."""
    return json.loads(report.to_json())


def plan_dict(plan: PartitionPlan) -> dict:
    return json.loads(plan.to_json())
