"""Expert-in-the-loop decision procedure.

Every step computes the model's class distribution for the user's current
window and its margin z (top minus second probability). z at or above the
fitted threshold ships the top-1 recommendation automatically; below it a
review ticket is raised for an expert, whose correction fine-tunes the
user's personal parameter copy and enters the history. A query budget
caps expert asks; once exhausted the loop falls back to automatic
recommendations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import model, nn
from .errors import InputError, StateError
from .uncertainty import MarginalDistribution, marginal_distance

TOP_K = 10


@dataclass
class ReviewTicket:
    ticket_id: str
    user_id: str
    step_index: int
    window_ids: list[int]          # model indices, oldest first, 0 = pad
    top_k: list[tuple[int, float]]
    z: float
    theta: float
    status: str = "pending"        # pending -> resolved
    corrected_id: int | None = None


@dataclass
class Decision:
    kind: str                      # "auto" | "queried"
    recommendation: tuple[int, float] | None
    top_k: list[tuple[int, float]]
    z: float
    ticket: ReviewTicket | None = None


class ExpertOracle(Protocol):
    def resolve(self, ticket: ReviewTicket) -> int: ...


@dataclass
class SessionState:
    """Per-user personalized model plus rolling history and query accounting."""

    user_id: str
    params: nn.Params
    config: model.ModelConfig
    user_profile: np.ndarray
    item_profiles: np.ndarray      # (n_classes, item_profile_dim), row 0 zeros
    distribution: MarginalDistribution | None = None
    history: list[int] = field(default_factory=list)
    budget: int | None = None      # None = unlimited
    finetune_lr: float = 1e-4
    finetune_steps: int = 5
    steps: int = 0
    queries: int = 0
    corrections: int = 0
    _ticket_seq: int = 0
    pending: ReviewTicket | None = None

    @property
    def theta(self) -> float:
        if self.distribution is None or self.distribution.theta is None:
            raise StateError("session has no fitted distribution/threshold")
        return self.distribution.theta

    def window_ids(self) -> list[int]:
        w = self.config.window
        recent = self.history[-w:]
        return [0] * (w - len(recent)) + list(recent)

    def window_sample(self, window_ids: list[int], target: int = 1) -> model.WindowSample:
        arr = np.array(window_ids, dtype=np.int64)
        return model.WindowSample(
            item_ids=arr,
            item_profiles=self.item_profiles[arr],
            user_profile=self.user_profile,
            target=target,
        )


def step(session: SessionState, window_ids: list[int] | None = None) -> Decision:
    """One recommendation step over the given (or session-current) window."""
    theta = session.theta
    ids = window_ids if window_ids is not None else session.window_ids()
    if len(ids) != session.config.window:
        raise InputError(
            f"window has {len(ids)} ids, expected {session.config.window}")
    sample = session.window_sample(ids)
    probs, _ = model.forward(session.params, session.config, sample)
    z = marginal_distance(probs)
    k = min(TOP_K, session.config.n_classes - 1)
    ranked = model.rank_classes(probs)[:k]
    top_k = [(int(i), float(probs[i])) for i in ranked]
    session.steps += 1
    budget_left = session.budget is None or session.queries < session.budget
    if z >= theta or not budget_left:
        return Decision(kind="auto", recommendation=top_k[0], top_k=top_k, z=z)
    session.queries += 1
    session._ticket_seq += 1
    ticket = ReviewTicket(
        ticket_id=f"{session.user_id}-t{session._ticket_seq}",
        user_id=session.user_id,
        step_index=session.steps - 1,
        window_ids=list(ids),
        top_k=top_k,
        z=z,
        theta=theta,
    )
    session.pending = ticket
    return Decision(kind="queried", recommendation=None, top_k=top_k, z=z, ticket=ticket)


def resolve(session: SessionState, ticket: ReviewTicket, corrected_id: int) -> None:
    """Apply an expert correction: fine-tune on the corrected window and
    append the correction (not the model's guess) to the history."""
    if ticket.status != "pending":
        raise StateError(f"ticket {ticket.ticket_id} already {ticket.status}")
    if not (1 <= corrected_id < session.config.n_classes):
        raise InputError(f"corrected id {corrected_id} outside vocabulary")
    sample = session.window_sample(ticket.window_ids, target=corrected_id)
    session.params = model.finetune(
        session.params, session.config, [sample],
        lr=session.finetune_lr, steps=session.finetune_steps,
    )
    ticket.status = "resolved"
    ticket.corrected_id = corrected_id
    session.corrections += 1
    session.history.append(corrected_id)
    if session.pending is ticket:
        session.pending = None


@dataclass
class ReplayOracle:
    """Replays a known ground-truth sequence as the expert's answers."""

    sequence: list[int]            # model indices; entry t answers step t

    def resolve(self, ticket: ReviewTicket) -> int:
        if not (0 <= ticket.step_index < len(self.sequence)):
            raise InputError(
                f"step {ticket.step_index} beyond the known sequence "
                f"(length {len(self.sequence)})")
        return self.sequence[ticket.step_index]


def replay_oracle(sequence: list[int]) -> ReplayOracle:
    return ReplayOracle(sequence=list(sequence))
