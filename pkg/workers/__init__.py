"""
HeatFlow Lab - Workers
======================
Role classes that orchestrate the computational modules, plus the Master
Worker that routes command-line verbs to them.

Usage:
    from workers import MasterWorker, FlowWorker, DestabWorker, FrobeniusWorker, VerificationWorker
"""

from workers.destab_worker import DestabWorker
from workers.flow_worker import FlowWorker
from workers.frobenius_worker import FrobeniusWorker
from workers.master import LabPhase, MasterWorker
from workers.verification import VerificationWorker

__all__ = [
    "MasterWorker",
    "LabPhase",
    "FlowWorker",
    "DestabWorker",
    "FrobeniusWorker",
    "VerificationWorker",
]
