import numpy as np
import pytest

from exrec import model


def tiny_config(**overrides):
    kwargs = dict(n_classes=5, window=2, item_embed_dim=3, user_embed_dim=2,
                  profile_embed_dim=2, gate_dim=3, user_profile_dim=2,
                  item_profile_dim=2)
    kwargs.update(overrides)
    return model.ModelConfig(**kwargs)


def random_sample(cfg, rng, allow_pad=True):
    low = 0 if allow_pad else 1
    return model.WindowSample(
        item_ids=np.array([rng.integers(low, cfg.n_classes)
                           for _ in range(cfg.window)]),
        item_profiles=rng.normal(size=(cfg.window, cfg.item_profile_dim)),
        user_profile=rng.normal(size=cfg.user_profile_dim),
        target=int(rng.integers(1, cfg.n_classes)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
