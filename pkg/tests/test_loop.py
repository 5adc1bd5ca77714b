"""Looped execution semantics: injection variants, unroll equivalence,
window arithmetic, and truncation correctness against a manual oracle."""

import numpy as np
import pytest

import looplab.engine as en
from looplab.loop import (LoopSchedule, looped_forward, schedule_step,
                          truncated_loss, window_start)
from looplab.model import ModelConfig, backbone_forward, embed_prompt, init_weights, read_out
from looplab.rng import derive_rng
from looplab.tasks import TaskSpec, sample_prompt_batch

from conftest import rel_err

CFG = ModelConfig(d_embed=12, heads=2, layers=1, d_max=2, k_max=4, seed=3)
SPEC = TaskSpec("linear", d=2, k=3)


@pytest.fixture
def weights():
    return init_weights(CFG, dtype=np.float64)


@pytest.fixture
def batch():
    return sample_prompt_batch(SPEC, 4, 3, derive_rng(0, "b"), d_max=CFG.d_max)


def test_schedule_validation():
    with pytest.raises(ValueError):
        LoopSchedule(b=12, T=20)
    with pytest.raises(ValueError):
        LoopSchedule(b=0, T=0)
    with pytest.raises(ValueError):
        LoopSchedule(b=4, T=2, injection="telepathy")


def test_schedule_step_none_and_linear():
    none = LoopSchedule(b=12, T=8, ramp="none")
    assert schedule_step(none, 0) == 12
    assert schedule_step(none, 10**6) == 12
    lin = LoopSchedule(b=12, T=8, ramp="linear", ramp_interval=1000)
    assert schedule_step(lin, 0) == 8
    assert schedule_step(lin, 999) == 8
    assert schedule_step(lin, 1000) == 9
    assert schedule_step(lin, 10**6) == 12


def test_schedule_monotone():
    lin = LoopSchedule(b=9, T=3, ramp="linear", ramp_interval=7)
    vals = [schedule_step(lin, s) for s in range(200)]
    assert all(b <= a for a, b in zip(vals[1:], vals[1:]))
    assert vals == sorted(vals)
    assert max(vals) == 9


def test_window_arithmetic():
    assert window_start(5, 3) == 2      # window {2,3,4,5}: 4 terms
    assert 5 - window_start(5, 3) + 1 == 4
    assert window_start(2, 15) == 1     # clamped: window {1,2}
    assert window_start(1, 1) == 1


def test_loop_t0_states(weights, batch):
    P = embed_prompt(batch.tokens, weights)
    y0 = looped_forward(weights, P, 0, "input_injection")
    assert (y0.data == 0).all()
    y0w = looped_forward(weights, P, 0, "weight_tying")
    assert y0w.data.tobytes() == P.data.tobytes()


def test_loop_t1_is_single_application(weights, batch):
    P = embed_prompt(batch.tokens, weights)
    y1 = looped_forward(weights, P, 1, "input_injection")
    direct = backbone_forward(P, weights, add_positional=True)
    assert y1.data.tobytes() == direct.data.tobytes()


def test_loop_unroll_equivalence_bitwise(weights, batch):
    # t external applications of (add P; backbone) must match exactly
    P = embed_prompt(batch.tokens, weights)
    t = 4
    looped = looped_forward(weights, P, t, "input_injection")
    Y = en.zeros(P.shape, dtype=np.float64)
    for _ in range(t):
        Y = backbone_forward(en.add(Y, P), weights, add_positional=True)
    assert looped.data.tobytes() == Y.data.tobytes()


def test_loop_determinism(weights, batch):
    P = embed_prompt(batch.tokens, weights)
    a = looped_forward(weights, P, 3)
    b = looped_forward(weights, P, 3)
    assert a.data.tobytes() == b.data.tobytes()


def test_capture_all_matches_final(weights, batch):
    P = embed_prompt(batch.tokens, weights)
    states = looped_forward(weights, P, 5, capture_all=True)
    assert len(states) == 5
    final = looped_forward(weights, P, 5)
    assert states[-1].data.tobytes() == final.data.tobytes()


def test_truncated_loss_perfect_predictor_is_zero(weights, batch):
    # stub model: read-out rigged to reproduce the targets exactly is not
    # expressible; instead check the loss formula on a zero-error batch by
    # zeroing targets and forcing zero predictions
    w = init_weights(CFG, dtype=np.float64)
    for name, p in w.params.items():
        if name.startswith("read_out"):
            p.data[:] = 0.0
    zero_target_batch = sample_prompt_batch(SPEC, 2, 3, derive_rng(1, "z"), d_max=CFG.d_max)
    zero_target_batch.targets[:] = 0.0
    loss = truncated_loss(w, zero_target_batch, LoopSchedule(b=3, T=2))
    assert loss.item() == 0.0


def test_truncated_loss_window_terms(weights, batch):
    # with T >= b the loss covers windows {1..b}; check against manual sum
    sched = LoopSchedule(b=3, T=3)
    loss = truncated_loss(weights, batch, sched)
    P = embed_prompt(batch.tokens, weights)
    targets = en.Tensor(batch.targets, dtype=np.float64)
    states = looped_forward(weights, P, 3, capture_all=True)
    manual = np.mean([en.squared_error_mean(read_out(s, weights), targets).item()
                      for s in states])
    assert abs(loss.item() - manual) < 1e-12


def test_truncated_loss_empty_batch(weights, batch):
    empty = sample_prompt_batch(SPEC, 1, 3, derive_rng(2, "e"), d_max=CFG.d_max)
    empty.tokens = empty.tokens[:0]
    empty.targets = empty.targets[:0]
    with pytest.raises(ValueError):
        truncated_loss(weights, empty, LoopSchedule(b=2, T=2))


@pytest.mark.parametrize("injection", ["input_injection", "weight_tying"])
def test_truncation_matches_manual_window_oracle(weights, batch, injection):
    """Gradients from truncated_loss equal a manually built graph that
    detaches at the window boundary and averages the same window terms."""
    sched = LoopSchedule(b=5, T=2, injection=injection)
    b_cur = 5
    b0 = window_start(b_cur, sched.T)

    loss = truncated_loss(weights, batch, sched, b_cur)
    loss.backward()
    got = {n: p.grad.copy() for n, p in weights.params.items() if p.grad is not None}
    weights.zero_grad()

    # oracle: full manual unroll, detach before the window, same mean
    P = embed_prompt(batch.tokens, weights)
    targets = en.Tensor(batch.targets, dtype=np.float64)
    Y = P if injection == "weight_tying" else en.zeros(P.shape, dtype=np.float64)
    terms = []
    for t in range(1, b_cur + 1):
        if t == b0:
            Y = Y.detach()
        Y = backbone_forward(Y if injection == "weight_tying" else en.add(Y, P),
                             weights, add_positional=True)
        if t >= b0:
            terms.append(en.squared_error_mean(read_out(Y, weights), targets))
    acc = terms[0]
    for t_ in terms[1:]:
        acc = en.add(acc, t_)
    manual = acc * (1.0 / len(terms))
    assert abs(manual.item() - loss.item()) < 1e-12
    manual.backward()
    for name, g in got.items():
        assert rel_err(g, weights[name].grad) < 1e-6, name
    weights.zero_grad()


def test_pre_window_iterations_detached(weights, batch):
    # memory contract: graph depth reflects T, not b; equivalently, grads
    # with (b=6, T=2) ignore the prefix exactly like a detached restart
    sched = LoopSchedule(b=6, T=2)
    loss = truncated_loss(weights, batch, sched)
    loss.backward()
    g_trunc = {n: p.grad.copy() for n, p in weights.params.items() if p.grad is not None}
    weights.zero_grad()

    with en.no_grad():
        P0 = embed_prompt(batch.tokens, weights)
        Y = en.zeros(P0.shape, dtype=np.float64)
        for _ in range(window_start(6, 2) - 1):
            Y = backbone_forward(en.add(Y, P0), weights, add_positional=True)
    P = embed_prompt(batch.tokens, weights)
    targets = en.Tensor(batch.targets, dtype=np.float64)
    Y = Y.detach()
    terms = []
    for _ in range(window_start(6, 2), 7):
        Y = backbone_forward(en.add(Y, P), weights, add_positional=True)
        terms.append(en.squared_error_mean(read_out(Y, weights), targets))
    acc = terms[0]
    for t_ in terms[1:]:
        acc = en.add(acc, t_)
    (acc * (1.0 / len(terms))).backward()
    for name, g in g_trunc.items():
        assert rel_err(g, weights[name].grad) < 1e-6, name
