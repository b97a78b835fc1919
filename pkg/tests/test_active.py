import numpy as np
import pytest

from exrec import active, model, uncertainty
from exrec.errors import InputError, StateError
from conftest import tiny_config


def _distribution(theta):
    dist = uncertainty.marginal_pdf(uncertainty.DirichletParams(1, 1, 1), grid_size=101)
    dist.level = 0.01
    dist.theta = theta
    return dist


def _session(theta=0.18, budget=None, seed=0, history=None):
    cfg = tiny_config()
    item_profiles = np.random.default_rng(99).normal(size=(cfg.n_classes,
                                                           cfg.item_profile_dim))
    item_profiles[0] = 0.0
    return active.SessionState(
        user_id="u1",
        params=model.init_params(cfg, seed=seed),
        config=cfg,
        user_profile=np.array([0.4, -0.2]),
        item_profiles=item_profiles,
        distribution=_distribution(theta),
        history=list(history or [1, 2, 3]),
        budget=budget,
    )


def test_step_auto_when_margin_clears_threshold():
    session = _session(theta=0.0)   # any z >= 0 ships automatically
    decision = active.step(session)
    assert decision.kind == "auto"
    assert decision.recommendation is not None
    assert decision.recommendation == decision.top_k[0]
    assert session.steps == 1
    assert session.queries == 0


def test_step_queries_when_uncertain():
    session = _session(theta=1.1)   # z <= 1 always, so always uncertain
    decision = active.step(session)
    assert decision.kind == "queried"
    assert decision.recommendation is None
    assert decision.ticket is not None
    assert decision.ticket.z == decision.z
    assert session.queries == 1


def test_step_threshold_boundary_rule():
    # the query rule is strictly z < theta, so z == theta ships auto
    session = _session(theta=0.0)
    decision = active.step(session)
    assert decision.z >= 0.0
    assert decision.kind == "auto"


def test_step_budget_exhaustion_falls_back_to_auto():
    session = _session(theta=1.1, budget=1)
    first = active.step(session)
    assert first.kind == "queried"
    active.resolve(session, first.ticket, 2)
    second = active.step(session)
    assert second.kind == "auto"
    assert session.queries == 1


def test_step_requires_distribution():
    session = _session()
    session.distribution = None
    with pytest.raises(StateError):
        active.step(session)


def test_resolve_increases_corrected_probability():
    session = _session(theta=1.1)
    decision = active.step(session)
    ticket = decision.ticket
    window = list(ticket.window_ids)
    before, _ = model.forward(session.params, session.config,
                              session.window_sample(window, target=4))
    active.resolve(session, ticket, 4)
    after, _ = model.forward(session.params, session.config,
                             session.window_sample(window, target=4))
    assert after[4] > before[4]
    assert session.history[-1] == 4
    assert session.corrections == 1
    assert ticket.status == "resolved"


def test_resolve_with_models_own_top1_still_finetunes():
    session = _session(theta=1.1)
    decision = active.step(session)
    own_top1 = decision.top_k[0][0]
    before = {k: w.copy() for k, w in session.params.items()}
    active.resolve(session, decision.ticket, own_top1)
    changed = any(not np.array_equal(before[k], session.params[k]) for k in before)
    assert changed
    assert session.history[-1] == own_top1


def test_resolve_twice_rejected():
    session = _session(theta=1.1)
    decision = active.step(session)
    active.resolve(session, decision.ticket, 2)
    with pytest.raises(StateError):
        active.resolve(session, decision.ticket, 3)


def test_resolve_invalid_id_rejected():
    session = _session(theta=1.1)
    decision = active.step(session)
    with pytest.raises(InputError):
        active.resolve(session, decision.ticket, 0)
    with pytest.raises(InputError):
        active.resolve(session, decision.ticket, 99)


def test_sessions_are_isolated():
    a = _session(theta=1.1)
    b = _session(theta=1.1)
    b.user_id = "u2"
    snapshot = {k: w.copy() for k, w in b.params.items()}
    decision = active.step(a)
    active.resolve(a, decision.ticket, 3)
    for name in snapshot:
        assert np.array_equal(b.params[name], snapshot[name])


def test_queried_steps_are_exactly_low_margin_steps():
    session = _session(theta=0.21)
    rng = np.random.default_rng(5)
    queried, low_margin = [], []
    for t in range(12):
        decision = active.step(session)
        queried.append(decision.kind == "queried")
        low_margin.append(decision.z < 0.21)
        if decision.kind == "queried":
            active.resolve(session, decision.ticket, int(rng.integers(1, 5)))
        else:
            session.history.append(int(rng.integers(1, 5)))
    assert queried == low_margin
    assert session.queries == sum(queried)
    assert session.steps == 12


def test_zero_threshold_never_queries():
    session = _session(theta=0.0)
    for _ in range(10):
        decision = active.step(session)
        assert decision.kind == "auto"
        session.history.append(decision.recommendation[0])
    assert session.queries == 0


def test_window_padding_for_short_history():
    session = _session(theta=0.0, history=[3])
    assert session.window_ids() == [0, 3]
    decision = active.step(session)
    assert decision.kind == "auto"


def test_replay_oracle_returns_sequence_element():
    oracle = active.replay_oracle([5, 6, 7])
    ticket = active.ReviewTicket(ticket_id="t", user_id="u", step_index=1,
                                 window_ids=[0, 1], top_k=[(1, 0.5)], z=0.1,
                                 theta=0.2)
    assert oracle.resolve(ticket) == 6


def test_replay_oracle_beyond_sequence_rejected():
    oracle = active.replay_oracle([5])
    ticket = active.ReviewTicket(ticket_id="t", user_id="u", step_index=3,
                                 window_ids=[0, 1], top_k=[(1, 0.5)], z=0.1,
                                 theta=0.2)
    with pytest.raises(InputError):
        oracle.resolve(ticket)
