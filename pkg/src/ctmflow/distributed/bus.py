"""Synchronous message transport with locality enforcement and fault injection."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Mapping

from ..errors import ProtocolViolation
from .messages import decode_messages, encode_messages

log = logging.getLogger(__name__)


@dataclass
class FaultPlan:
    """Faults to inject into one distributed run.

    Attributes
    ----------
    drops : set of (round, sender, receiver)
        Messages silently lost on their first delivery attempt.
    corrupt_theta : dict
        ``round -> (cell, which, scale)``; before that round the agent's
        ``which`` (``"zeta"`` or ``"flow"``) coefficient vector is
        multiplied elementwise by ``1 + scale * (1, 2, 3, ...)``.
    learning_init : dict, optional
        ``{"zeta": array, "flow": array}`` replacing the random starting
        states of the first learning phase only.
    """

    drops: set = field(default_factory=set)
    corrupt_theta: dict = field(default_factory=dict)
    learning_init: dict | None = None


class Transport(ABC):
    """Round-barrier transport: everything sent in round ``t`` arrives in ``t + 1``."""

    @abstractmethod
    def deliver(self, outboxes: Mapping[int, list], round_no: int, faults: bool = True) -> dict:
        """Route ``{sender: [(destinations, Message), ...]}`` into per-agent inboxes."""


class SyncBus(Transport):
    """In-process bus that only carries traffic along communication edges.

    Parameters
    ----------
    adjacency : mapping
        ``cell -> set of neighbor cells`` of the communication graph.
    plan : FaultPlan, optional
    wire : bool
        Pass every inbox through the byte encoding, as a socket transport
        would.
    """

    def __init__(self, adjacency: Mapping[int, set], plan: FaultPlan | None = None, wire: bool = False):
        self.adjacency = {k: frozenset(v) for k, v in adjacency.items()}
        self.plan = plan
        self.wire = wire
        self.dropped = []
        self._checked = set()

    def _check_route(self, sender, dests, msg):
        if msg.sender != sender:
            raise ProtocolViolation(f"agent {sender} sent a message signed by {msg.sender}")
        key = (sender, dests)
        if key in self._checked:
            return
        allowed = self.adjacency[sender]
        for d in dests:
            if d not in allowed:
                raise ProtocolViolation(f"agent {sender} tried to message non-neighbor {d}")
        self._checked.add(key)

    def deliver(self, outboxes, round_no, faults=True):
        inboxes = {k: [] for k in self.adjacency}
        drops = self.plan.drops if (faults and self.plan is not None) else ()
        for sender, out in outboxes.items():
            for dests, msg in out:
                self._check_route(sender, dests, msg)
                for d in dests:
                    if drops and (round_no, sender, d) in drops:
                        self.dropped.append((round_no, sender, d, msg.kind))
                        log.debug("dropping %s from %d to %d in round %d", msg.kind.name, sender, d, round_no)
                        continue
                    inboxes[d].append(msg)
        if self.wire:
            inboxes = {k: decode_messages(encode_messages(v)) for k, v in inboxes.items()}
        return inboxes
