"""New-user initialization: profile similarity and a one-epoch fine-tune.

Profile features mix units (age, BMI, scale scores), so distances are
computed on z-scored vectors using training-population statistics; missing
fields are imputed with the population mean before standardization. The
same statistics are persisted next to the checkpoint so serving matches
training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model, nn
from .data import ProfileStats
from .errors import InputError


@dataclass
class ProfileIndex:
    """User ids with profile vectors on a shared field schema."""

    user_ids: list[str]
    vectors: np.ndarray          # (n_users, n_fields), NaN for missing
    stats: ProfileStats

    @classmethod
    def build(cls, profiles: dict[str, np.ndarray], stats: ProfileStats) -> "ProfileIndex":
        if len(profiles) != len(set(profiles)):
            raise InputError("duplicate user ids in profile index")
        users = list(profiles.keys())
        vectors = np.stack([np.asarray(profiles[u], dtype=np.float64) for u in users])
        if vectors.shape[1] != len(stats.fields):
            raise InputError(
                f"profile vectors have {vectors.shape[1]} fields, stats expect "
                f"{len(stats.fields)}")
        return cls(user_ids=users, vectors=vectors, stats=stats)

    def standardized(self, vec: np.ndarray) -> np.ndarray:
        filled = np.where(np.isnan(vec), self.stats.mean, vec)
        return (filled - self.stats.mean) / self.stats.std


def similar_users(index: ProfileIndex, query: np.ndarray, k: int,
                  exclude: str | None = None) -> list[str]:
    """The k nearest users by Euclidean distance on standardized profiles.

    Ties break by ascending user id; `exclude` drops the query user's own
    entry when it is present in the index.
    """
    candidates = [(u, index.standardized(v))
                  for u, v in zip(index.user_ids, index.vectors) if u != exclude]
    if not (1 <= k <= len(candidates)):
        raise InputError(f"k={k} out of range: {len(candidates)} candidate users")
    q = index.standardized(np.asarray(query, dtype=np.float64))
    scored = sorted(((float(np.linalg.norm(v - q)), u) for u, v in candidates),
                    key=lambda t: (t[0], t[1]))
    return [u for _, u in scored[:k]]


@dataclass
class PersonalizedInit:
    params: nn.Params
    used_fallback: bool = False


def init_for_new_user(global_params: nn.Params, config: model.ModelConfig,
                      windows: Sequence[model.WindowSample],
                      lr: float = 1e-4, epochs: int = 1,
                      seed: int = 0) -> PersonalizedInit:
    """Fine-tune a copy of the global model on the selected users' windows.

    One epoch at a small learning rate by default. An empty window pool
    falls back to an untouched copy of the global parameters, flagged.
    """
    if not windows:
        return PersonalizedInit(
            params={k: w.copy() for k, w in global_params.items()},
            used_fallback=True,
        )
    tuned = model.finetune(global_params, config, windows, lr=lr, epochs=epochs, seed=seed)
    return PersonalizedInit(params=tuned, used_fallback=False)
