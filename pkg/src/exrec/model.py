"""Attention-augmented recurrent next-item predictor.

The network embeds the item one-hots and the user profile, gates the item
embedding coordinates with a user-conditioned softmax, scores each window
step from the gated features plus an item-profile embedding (temporal
attention), feeds the attention-weighted features through a plain ReLU
recurrent cell, and decodes the final hidden state into a class
distribution. Index 0 is a padding class whose input one-hot is the zero
vector; it is never a prediction target and is masked out of rankings.

The graph is fixed, so the backward pass is written in closed form and
validated against finite differences (see nn.grad_check).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import nn
from .errors import ConfigError, InputError, ShapeError

CHECKPOINT_FORMAT_VERSION = 1

PARAM_NAMES = (
    "embed_items",      # item_embed_dim x n_classes, consumes the item one-hot
    "embed_user",       # user_embed_dim x user_profile_dim
    "embed_item_profile",  # profile_embed_dim x item_profile_dim
    "gate_items",       # gate_dim x item_embed_dim
    "gate_user",        # gate_dim x user_embed_dim
    "step_from_features",  # window x gate_dim, temporal-attention logits
    "step_from_profile",   # window x profile_embed_dim
    "rnn_input",        # hidden_dim x gate_dim
    "rnn_hidden",       # hidden_dim x hidden_dim
    "decoder",          # n_classes x hidden_dim
)


@dataclass(frozen=True)
class ModelConfig:
    """Dimension configuration. n_classes counts the padding class at index 0."""

    n_classes: int
    window: int = 3
    item_embed_dim: int = 20
    user_embed_dim: int = 15
    profile_embed_dim: int = 3
    gate_dim: int = 10
    user_profile_dim: int = 3
    item_profile_dim: int = 2
    hidden_dim: int = 0  # 0 means "use gate_dim"

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name == "hidden_dim":
                continue
            if value < 1:
                raise ConfigError(f"ModelConfig.{name} must be >= 1, got {value}")
        if self.hidden_dim == 0:
            object.__setattr__(self, "hidden_dim", self.gate_dim)

    @classmethod
    def mhealth(cls, n_items: int = 44, user_profile_dim: int = 3,
                item_profile_dim: int = 2) -> "ModelConfig":
        return cls(n_classes=n_items + 1, window=3, item_embed_dim=20,
                   user_embed_dim=15, profile_embed_dim=3, gate_dim=10,
                   user_profile_dim=user_profile_dim,
                   item_profile_dim=item_profile_dim)

    @classmethod
    def movielens(cls, n_items: int = 100, user_profile_dim: int = 3,
                  item_profile_dim: int = 3) -> "ModelConfig":
        return cls(n_classes=n_items + 1, window=3, item_embed_dim=1000,
                   user_embed_dim=1000, profile_embed_dim=3, gate_dim=300,
                   user_profile_dim=user_profile_dim,
                   item_profile_dim=item_profile_dim)

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        return {
            "embed_items": (self.item_embed_dim, self.n_classes),
            "embed_user": (self.user_embed_dim, self.user_profile_dim),
            "embed_item_profile": (self.profile_embed_dim, self.item_profile_dim),
            "gate_items": (self.gate_dim, self.item_embed_dim),
            "gate_user": (self.gate_dim, self.user_embed_dim),
            "step_from_features": (self.window, self.gate_dim),
            "step_from_profile": (self.window, self.profile_embed_dim),
            "rnn_input": (self.hidden_dim, self.gate_dim),
            "rnn_hidden": (self.hidden_dim, self.hidden_dim),
            "decoder": (self.n_classes, self.hidden_dim),
        }


@dataclass
class WindowSample:
    """One training/inference window: `window` item ids (0 = pad, oldest first),
    the matching item-profile rows, the user profile, and the next item id."""

    item_ids: np.ndarray          # (window,) int
    item_profiles: np.ndarray     # (window, item_profile_dim)
    user_profile: np.ndarray      # (user_profile_dim,)
    target: int

    def validate(self, config: ModelConfig) -> None:
        ids = np.asarray(self.item_ids)
        if ids.shape != (config.window,):
            raise InputError(f"window has {ids.shape} ids, expected {config.window}")
        if np.any(ids < 0) or np.any(ids >= config.n_classes):
            raise InputError(f"item id out of range [0, {config.n_classes}) in {ids}")
        if self.item_profiles.shape != (config.window, config.item_profile_dim):
            raise InputError(
                f"item profiles shape {self.item_profiles.shape} != "
                f"({config.window}, {config.item_profile_dim})"
            )
        if self.user_profile.shape != (config.user_profile_dim,):
            raise InputError(
                f"user profile length {self.user_profile.shape} != {config.user_profile_dim}"
            )
        if not (1 <= self.target < config.n_classes):
            raise InputError(f"target {self.target} must be a real class (1..N-1)")


def init_params(config: ModelConfig, seed: int = 0) -> nn.Params:
    """Seeded uniform(-a, a) initialization with a = sqrt(6/(fan_in+fan_out))."""
    rng = np.random.default_rng(seed)
    return {name: nn.glorot_uniform(rng, *shape)
            for name, shape in config.param_shapes().items()}


def check_params(params: nn.Params, config: ModelConfig) -> None:
    shapes = config.param_shapes()
    for name, shape in shapes.items():
        if name not in params:
            raise ConfigError(f"missing parameter matrix '{name}'")
        if params[name].shape != shape:
            raise ConfigError(
                f"parameter '{name}' has shape {params[name].shape}, expected {shape}"
            )


@dataclass
class Batch:
    """Dense batch layout used by forward/backward."""

    item_ids: np.ndarray       # (B, window) int
    item_profiles: np.ndarray  # (B, window, item_profile_dim)
    user_profiles: np.ndarray  # (B, user_profile_dim)
    targets: np.ndarray        # (B,) int

    @classmethod
    def from_samples(cls, samples: Sequence[WindowSample]) -> "Batch":
        if not samples:
            raise InputError("empty batch")
        return cls(
            item_ids=np.stack([np.asarray(s.item_ids, dtype=np.int64) for s in samples]),
            item_profiles=np.stack([np.asarray(s.item_profiles, dtype=np.float64)
                                    for s in samples]),
            user_profiles=np.stack([np.asarray(s.user_profile, dtype=np.float64)
                                    for s in samples]),
            targets=np.array([s.target for s in samples], dtype=np.int64),
        )

    def __len__(self) -> int:
        return self.item_ids.shape[0]


@dataclass
class ForwardCache:
    """Intermediates saved by forward_batch for the closed-form backward pass."""

    batch: Batch
    item_pre: np.ndarray       # (B, w, item_embed_dim) pre-ReLU item embedding
    item_emb: np.ndarray       # (B, w, item_embed_dim)
    user_pre: np.ndarray       # (B, user_embed_dim)
    user_emb: np.ndarray       # (B, user_embed_dim)
    gated_in: np.ndarray       # (B, w, gate_dim) item part of the gate logits
    gate_probs: np.ndarray     # (B, w, gate_dim)
    features: np.ndarray       # (B, w, gate_dim) gated item features
    prof_pre: np.ndarray       # (B, w, profile_embed_dim)
    prof_emb: np.ndarray       # (B, w, profile_embed_dim)
    step_vecs: np.ndarray      # (B, w, w) per-step logit vectors
    step_probs: np.ndarray     # (B, w) temporal attention, chronological order
    rnn_in: np.ndarray         # (B, w, gate_dim) attention-weighted features
    hidden_pre: np.ndarray     # (B, w, hidden_dim)
    hidden: np.ndarray         # (B, w, hidden_dim)
    probs: np.ndarray          # (B, n_classes)


def _step_coordinates(window: int) -> np.ndarray:
    # chronological step j carries lag k = window - j; its logit is
    # coordinate k-1 = window-1-j of that step's logit vector
    return np.arange(window - 1, -1, -1)


def forward_batch(params: nn.Params, config: ModelConfig, batch: Batch) -> tuple[np.ndarray, ForwardCache]:
    """Run the network over a batch; returns class probabilities and the cache."""
    check_params(params, config)
    b, w = batch.item_ids.shape
    if w != config.window:
        raise ShapeError(f"batch window {w} != configured window {config.window}")

    # item one-hots: column lookup; padding (id 0) contributes the zero vector
    item_pre = params["embed_items"].T[batch.item_ids]        # (B, w, Kx)
    pad_mask = batch.item_ids == 0
    item_pre = np.where(pad_mask[:, :, None], 0.0, item_pre)
    item_emb = nn.relu(item_pre)

    user_pre = batch.user_profiles @ params["embed_user"].T   # (B, Ku)
    user_emb = nn.relu(user_pre)

    gated_in = item_emb @ params["gate_items"].T              # (B, w, K)
    user_gate = user_emb @ params["gate_user"].T              # (B, K)
    gate_probs = nn.softmax(gated_in + user_gate[:, None, :], axis=-1)
    features = gate_probs * gated_in                          # (B, w, K)

    prof_pre = batch.item_profiles @ params["embed_item_profile"].T  # (B, w, Ke)
    prof_emb = nn.relu(prof_pre)

    step_vecs = features @ params["step_from_features"].T \
        + prof_emb @ params["step_from_profile"].T            # (B, w, w)
    coords = _step_coordinates(w)
    step_logits = step_vecs[:, np.arange(w), coords]          # (B, w)
    step_probs = nn.softmax(step_logits, axis=-1)
    rnn_in = step_probs[:, :, None] * features                # (B, w, K)

    hidden_pre = np.empty((b, w, config.hidden_dim))
    hidden = np.empty((b, w, config.hidden_dim))
    h = np.zeros((b, config.hidden_dim))
    for j in range(w):
        pre = rnn_in[:, j, :] @ params["rnn_input"].T + h @ params["rnn_hidden"].T
        h = nn.relu(pre)
        hidden_pre[:, j, :] = pre
        hidden[:, j, :] = h

    logits = h @ params["decoder"].T                          # (B, N)
    probs = nn.softmax(logits, axis=-1)
    nn.require_finite("forward output", probs)

    cache = ForwardCache(batch, item_pre, item_emb, user_pre, user_emb,
                         gated_in, gate_probs, features, prof_pre, prof_emb,
                         step_vecs, step_probs, rnn_in, hidden_pre, hidden, probs)
    return probs, cache


def forward(params: nn.Params, config: ModelConfig, sample: WindowSample) -> tuple[np.ndarray, ForwardCache]:
    """Single-sample forward; returns the probability vector over all classes."""
    sample.validate(config)
    probs, cache = forward_batch(params, config, Batch.from_samples([sample]))
    return probs[0], cache


def mean_cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    picked = probs[np.arange(len(targets)), targets]
    return float(np.mean(-np.log(picked + nn.LOG_FLOOR)))


def backward_batch(params: nn.Params, config: ModelConfig, cache: ForwardCache) -> nn.Params:
    """Gradients of the mean cross-entropy over the cached batch."""
    batch = cache.batch
    b, w = batch.item_ids.shape
    probs = cache.probs

    grads = {name: np.zeros_like(params[name]) for name in PARAM_NAMES}

    d_probs = np.zeros_like(probs)
    rows = np.arange(b)
    d_probs[rows, batch.targets] = -1.0 / (b * (probs[rows, batch.targets] + nn.LOG_FLOOR))
    d_logits = nn.softmax_backward(probs, d_probs, axis=-1)

    h_last = cache.hidden[:, -1, :]
    grads["decoder"] += d_logits.T @ h_last
    d_h = d_logits @ params["decoder"]

    d_rnn_in = np.empty_like(cache.rnn_in)
    for j in range(w - 1, -1, -1):
        d_pre = d_h * (cache.hidden_pre[:, j, :] > 0)
        h_prev = cache.hidden[:, j - 1, :] if j > 0 else np.zeros_like(d_pre)
        grads["rnn_input"] += d_pre.T @ cache.rnn_in[:, j, :]
        grads["rnn_hidden"] += d_pre.T @ h_prev
        d_rnn_in[:, j, :] = d_pre @ params["rnn_input"]
        d_h = d_pre @ params["rnn_hidden"]

    d_step_probs = np.sum(d_rnn_in * cache.features, axis=-1)       # (B, w)
    d_features = cache.step_probs[:, :, None] * d_rnn_in

    d_step_logits = nn.softmax_backward(cache.step_probs, d_step_probs, axis=-1)
    d_step_vecs = np.zeros_like(cache.step_vecs)
    coords = _step_coordinates(w)
    d_step_vecs[:, np.arange(w), coords] = d_step_logits

    grads["step_from_features"] += np.einsum("bjw,bjk->wk", d_step_vecs, cache.features)
    d_features += d_step_vecs @ params["step_from_features"]
    grads["step_from_profile"] += np.einsum("bjw,bje->we", d_step_vecs, cache.prof_emb)
    d_prof_emb = d_step_vecs @ params["step_from_profile"]

    d_prof_pre = d_prof_emb * (cache.prof_pre > 0)
    grads["embed_item_profile"] += np.einsum("bje,bjn->en", d_prof_pre, batch.item_profiles)

    d_gate_probs = d_features * cache.gated_in
    d_gated_in = d_features * cache.gate_probs
    d_gate_logits = nn.softmax_backward(cache.gate_probs, d_gate_probs, axis=-1)
    d_gated_in += d_gate_logits
    d_user_gate = np.sum(d_gate_logits, axis=1)                     # (B, K)

    grads["gate_items"] += np.einsum("bjk,bjx->kx", d_gated_in, cache.item_emb)
    d_item_emb = d_gated_in @ params["gate_items"]
    grads["gate_user"] += d_user_gate.T @ cache.user_emb
    d_user_emb = d_user_gate @ params["gate_user"]

    d_item_pre = d_item_emb * (cache.item_pre > 0)
    flat_ids = batch.item_ids.reshape(-1)
    flat_grad = d_item_pre.reshape(b * w, -1)
    keep = flat_ids != 0
    scatter = np.zeros((config.n_classes, config.item_embed_dim))
    np.add.at(scatter, flat_ids[keep], flat_grad[keep])
    grads["embed_items"] += scatter.T

    d_user_pre = d_user_emb * (cache.user_pre > 0)
    grads["embed_user"] += d_user_pre.T @ batch.user_profiles

    return grads


def loss_and_grads(params: nn.Params, config: ModelConfig, batch: Batch) -> tuple[float, nn.Params]:
    probs, cache = forward_batch(params, config, batch)
    return mean_cross_entropy(probs, batch.targets), backward_batch(params, config, cache)


@dataclass
class TrainResult:
    params: nn.Params
    epoch_losses: list[float] = field(default_factory=list)


def train(dataset: Sequence[WindowSample], config: ModelConfig, epochs: int = 30,
          seed: int = 0, batch_size: int = 32, lr: float = 1e-3,
          initial: nn.Params | None = None) -> TrainResult:
    """Minimize mean cross-entropy with Adam over shuffled minibatches.

    Deterministic given (seed, dataset order, hyperparameters). epochs=0
    returns the seeded initialization untouched.
    """
    if not dataset:
        raise InputError("train: dataset is empty")
    for s in dataset:
        s.validate(config)
    params = {k: w.copy() for k, w in initial.items()} if initial else init_params(config, seed)
    check_params(params, config)
    rng = np.random.default_rng(seed + 1)
    state = nn.AdamState.for_params(params, lr=lr)
    batch_all = Batch.from_samples(dataset)
    n = len(batch_all)
    losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            minibatch = Batch(batch_all.item_ids[idx], batch_all.item_profiles[idx],
                              batch_all.user_profiles[idx], batch_all.targets[idx])
            loss, grads = loss_and_grads(params, config, minibatch)
            params = nn.adam_step(params, grads, state)
            total += loss * len(idx)
        losses.append(total / n)
    return TrainResult(params=params, epoch_losses=losses)


def finetune(params: nn.Params, config: ModelConfig, samples: Sequence[WindowSample],
             lr: float = 1e-4, epochs: int = 1, steps: int | None = None,
             seed: int = 0, batch_size: int = 32) -> nn.Params:
    """Continue training from `params` with a fresh Adam state.

    With `steps` set, runs that many Adam updates cycling over minibatches
    (used for online corrections); otherwise runs whole epochs. The input
    parameter dict is never mutated.
    """
    if not samples:
        raise InputError("finetune: no samples")
    for s in samples:
        s.validate(config)
    current = {k: w.copy() for k, w in params.items()}
    check_params(current, config)
    state = nn.AdamState.for_params(current, lr=lr)
    batch_all = Batch.from_samples(samples)
    n = len(batch_all)
    rng = np.random.default_rng(seed + 1)
    if steps is not None:
        order = rng.permutation(n)
        pos = 0
        for _ in range(steps):
            idx = order[pos:pos + batch_size]
            if len(idx) == 0:
                order = rng.permutation(n)
                pos = 0
                idx = order[:batch_size]
            pos += batch_size
            minibatch = Batch(batch_all.item_ids[idx], batch_all.item_profiles[idx],
                              batch_all.user_profiles[idx], batch_all.targets[idx])
            _, grads = loss_and_grads(current, config, minibatch)
            current = nn.adam_step(current, grads, state)
        return current
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            minibatch = Batch(batch_all.item_ids[idx], batch_all.item_profiles[idx],
                              batch_all.user_profiles[idx], batch_all.targets[idx])
            _, grads = loss_and_grads(current, config, minibatch)
            current = nn.adam_step(current, grads, state)
    return current


def rank_classes(probs: np.ndarray) -> np.ndarray:
    """All real class ids sorted by probability descending, ties by ascending id."""
    ids = np.arange(1, probs.shape[0])
    order = np.lexsort((ids, -probs[1:]))
    return ids[order]


def predict_topk(params: nn.Params, config: ModelConfig, sample: WindowSample,
                 k: int) -> list[tuple[int, float]]:
    """Top-k (class id, probability) with the padding class excluded."""
    n_real = config.n_classes - 1
    if not (1 <= k <= n_real):
        raise InputError(f"k={k} out of range [1, {n_real}]")
    probs, _ = forward(params, config, sample)
    ranked = rank_classes(probs)[:k]
    return [(int(i), float(probs[i])) for i in ranked]


# --- checkpoint serialization -------------------------------------------------

def params_to_json(params: nn.Params, config: ModelConfig) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(config),
        "weights": {
            name: {"rows": int(w.shape[0]), "cols": int(w.shape[1]),
                   "values": w.reshape(-1).tolist()}
            for name, w in params.items()
        },
    }


def params_from_json(doc: dict) -> tuple[nn.Params, ModelConfig]:
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format_version {doc.get('format_version')}")
    config = ModelConfig(**doc["config"])
    params: nn.Params = {}
    for name, entry in doc["weights"].items():
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["rows"], entry["cols"])
        nn.require_finite(f"checkpoint weights '{name}'", arr)
        params[name] = arr
    check_params(params, config)
    return params, config


def save_checkpoint(path: str, params: nn.Params, config: ModelConfig) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(params_to_json(params, config), fh)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[nn.Params, ModelConfig]:
    with open(path) as fh:
        return params_from_json(json.load(fh))
