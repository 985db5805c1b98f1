"""Neighbor-message agents solving the per-cycle problem without a coordinator."""

from .agent import (
    AgentState,
    VerifyResult,
    agent_round,
    eta_step,
    jacobi_flow_step,
    jacobi_zeta_step,
    local_h,
    verify_and_recover,
)
from .bus import FaultPlan, SyncBus, Transport
from .messages import Kind, Message, decode_messages, encode_messages
from .solver import DistributedReport, build_agents, distributed_solve, run_agents

__all__ = [
    "AgentState", "VerifyResult", "agent_round", "eta_step", "jacobi_flow_step", "jacobi_zeta_step",
    "local_h", "verify_and_recover", "FaultPlan", "SyncBus", "Transport", "Kind", "Message",
    "decode_messages", "encode_messages", "DistributedReport", "build_agents", "distributed_solve",
    "run_agents",
]
