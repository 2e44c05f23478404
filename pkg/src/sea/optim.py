"""Bias-corrected Adam over a fixed, ordered list of tensors."""

from __future__ import annotations

import math

import torch


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self, params=None) -> None:
        # ``params`` only lets callers pass the list they already hold; it must match.
        if params is not None and len(params) != len(self.params):
            raise ValueError("parameter list does not match optimizer")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        step = self.lr / c1
        root_c2 = math.sqrt(c2)
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            denom = (v.sqrt() / root_c2).add_(self.eps)
            p.addcdiv_(m, denom, value=-step)

    def state_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for k, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{k}"] = m
            out[f"v.{k}"] = v
        return out

    def load_state(self, t: int, tensors: dict[str, torch.Tensor]) -> None:
        self.t = t
        for k in range(len(self.params)):
            self.m[k].copy_(tensors[f"m.{k}"])
            self.v[k].copy_(tensors[f"v.{k}"])

