import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sea.optim import Adam


def test_two_step_scalar_by_hand():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    p = torch.tensor([1.0], dtype=torch.float64)
    opt = Adam([p], lr=lr)
    grads = [2.0, -1.0]
    m = v = 0.0
    x = 1.0
    for t, g in enumerate(grads, start=1):
        p.grad = torch.tensor([g], dtype=torch.float64)
        opt.step()
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat, vhat = m / (1 - b1 ** t), v / (1 - b2 ** t)
        x -= lr * mhat / (math.sqrt(vhat) + eps)
        assert float(p) == pytest.approx(x, rel=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-4, 1e-1))
def test_first_step_is_lr_regardless_of_gradient_scale(g, lr):
    p = torch.zeros(1, dtype=torch.float64)
    opt = Adam([p], lr=lr)
    p.grad = torch.tensor([g], dtype=torch.float64)
    opt.step()
    assert float(-p) == pytest.approx(lr, rel=1e-5)


def test_matches_torch_adam_bitwise():
    r = np.random.default_rng(0)
    a = torch.tensor(r.standard_normal((4, 3)))
    b = a.clone()
    ours = Adam([a], lr=1e-2)
    ref = torch.optim.Adam([b], lr=1e-2)
    for _ in range(25):
        g = torch.tensor(r.standard_normal((4, 3)))
        a.grad, b.grad = g.clone(), g.clone()
        ours.step()
        ref.step()
    torch.testing.assert_close(a, b, rtol=1e-14, atol=1e-15)


def test_state_round_trip_continues_identically():
    r = np.random.default_rng(1)
    grads = [torch.tensor(r.standard_normal(3)) for _ in range(10)]
    p = torch.zeros(3, dtype=torch.float64)
    opt = Adam([p], lr=0.05)
    for g in grads[:5]:
        p.grad = g
        opt.step()
    q = p.clone()
    opt2 = Adam([q], lr=0.05)
    opt2.load_state(opt.t, {k: v.clone() for k, v in opt.state_tensors().items()})
    for g in grads[5:]:
        p.grad, q.grad = g, g.clone()
        opt.step()
        opt2.step()
    assert torch.equal(p, q)


def test_skips_params_without_grad_and_zero_grad():
    p, q = torch.ones(2, dtype=torch.float64), torch.ones(2, dtype=torch.float64)
    opt = Adam([p, q], lr=0.1)
    p.grad = torch.ones(2, dtype=torch.float64)
    opt.step()
    assert torch.equal(q, torch.ones(2, dtype=torch.float64))
    opt.zero_grad()
    assert p.grad is None
