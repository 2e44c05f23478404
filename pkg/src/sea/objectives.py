"""Loss terms: BPR, SoloSim and InfoNCE alignment, CLUB and negative-l2 distancing."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
_LOG_2PI = math.log(2.0 * math.pi)


def _t(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x), dtype=torch.float64)


class VariationalEstimator(nn.Module):
    """Diagonal-Gaussian conditional q(g | q) with a tanh hidden layer.

    The mean and log-variance heads share the hidden layer; log-variances
    are clamped to [-10, 10].
    """

    def __init__(self, in_dim: int, out_dim: int | None = None, hidden: int | None = None,
                 rng: np.random.Generator | None = None):
        super().__init__()
        out_dim = in_dim if out_dim is None else out_dim
        hidden = 2 * in_dim if hidden is None else hidden
        rng = np.random.default_rng(0) if rng is None else rng
        self.layer1 = nn.Linear(in_dim, hidden, dtype=torch.float64)
        self.mu_head = nn.Linear(hidden, out_dim, dtype=torch.float64)
        self.logvar_head = nn.Linear(hidden, out_dim, dtype=torch.float64)
        with torch.no_grad():
            for lin in (self.layer1, self.mu_head, self.logvar_head):
                lin.weight.copy_(torch.from_numpy(xavier_uniform(lin.weight.shape, rng)))
                lin.bias.zero_()

    def forward(self, q: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = torch.tanh(self.layer1(q))
        logvar = torch.clamp(self.logvar_head(h), LOGVAR_MIN, LOGVAR_MAX)
        return self.mu_head(h), logvar

    def log_density(self, g, q) -> torch.Tensor:
        """Per-row log q(g_i | q_i)."""
        g, q = _t(g), _t(q)
        mu, logvar = self(q)
        return -0.5 * (_LOG_2PI + logvar + (g - mu) ** 2 * torch.exp(-logvar)).sum(dim=1)

    def log_likelihood(self, g, q) -> torch.Tensor:
        return self.log_density(g, q).mean()


def xavier_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform draw, fan computed as torch does for a 2-D weight."""
    fan_out, fan_in = shape[0], shape[1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=tuple(shape))


# --------------------------------------------------------------------- ranking


def bpr_loss(E_u, E_i, triplets) -> torch.Tensor:
    """Mean softplus(-(s_ui - s_uj)) over the batch."""
    E_u, E_i = _t(E_u), _t(E_i)
    tri = torch.as_tensor(np.asarray(triplets), dtype=torch.long)
    u = E_u[tri[:, 0]]
    margin = (u * E_i[tri[:, 1]]).sum(1) - (u * E_i[tri[:, 2]]).sum(1)
    return F.softplus(-margin).mean()


# ------------------------------------------------------------------- alignment


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")


def solosim_loss(G_v, G_t, tau: float) -> torch.Tensor:
    """One softmax over the batch's paired visual-text inner products.

    No cross-pair negatives are formed: the logits are the N diagonal
    similarities only.
    """
    _check_tau(tau)
    G_v, G_t = _t(G_v), _t(G_t)
    s = (G_v * G_t).sum(1) / tau
    return -torch.log_softmax(s, dim=0).mean()


def infonce_loss(G_v, G_t, tau: float) -> torch.Tensor:
    """Symmetric in-batch InfoNCE with the diagonal as positives."""
    _check_tau(tau)
    G_v, G_t = _t(G_v), _t(G_t)
    logits = G_v @ G_t.T / tau
    target = torch.arange(logits.shape[0])
    return 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target))


# ----------------------------------------------------------------- distancing


def club_estimate(est: VariationalEstimator, G, Q) -> torch.Tensor:
    """Sample CLUB upper bound of I(G; Q) under the estimator's q(G | Q).

    The all-pairs term mean_j log q(G_j | Q_i) is evaluated exactly through
    the batch mean and variance of G, which is O(N d) instead of O(N^2 d).
    """
    G, Q = _t(G), _t(Q)
    mu, logvar = est(Q)
    inv_var = torch.exp(-logvar)
    positive = -0.5 * ((G - mu) ** 2 * inv_var).sum(1)
    g_mean = G.mean(0, keepdim=True)
    g_var = ((G - g_mean) ** 2).mean(0, keepdim=True)
    negative = -0.5 * ((g_var + (g_mean - mu) ** 2) * inv_var).sum(1)
    # log-normalizer terms depend only on Q_i and cancel
    return (positive - negative).mean()


def club_likelihood_step(est: VariationalEstimator, G, Q, lr: float, optimizer=None) -> tuple[VariationalEstimator, float]:
    """One ascent step on mean log q(G|Q); G and Q are treated as constants.

    Uses ``optimizer`` when given (the trainer passes a dedicated Adam),
    plain gradient ascent with step ``lr`` otherwise. Returns the pre-step
    mean log-likelihood.
    """
    G, Q = _t(G).detach(), _t(Q).detach()
    params = list(est.parameters())
    for p in params:
        p.grad = None
    ll = est.log_likelihood(G, Q)
    (-ll).backward()
    if optimizer is not None:
        optimizer.step(params)
    elif lr:
        with torch.no_grad():
            for p in params:
                p.sub_(lr * p.grad)
    for p in params:
        p.grad = None
    return est, float(ll.detach())


def neg_l2_distance(G, Q) -> torch.Tensor:
    """Minus the batch-mean squared distance between paired rows."""
    G, Q = _t(G), _t(Q)
    if G.shape != Q.shape:
        raise ValueError(f"shape mismatch {tuple(G.shape)} vs {tuple(Q.shape)}")
    return -((G - Q) ** 2).sum(1).mean()


# ---------------------------------------------------------------------- report


@dataclass
class LossReport:
    bpr: float
    align: float
    dis_visual: float
    dis_textual: float
    total: float

    @classmethod
    def combine(cls, bpr, align, dis_visual, dis_textual, alpha, beta) -> "LossReport":
        total = bpr + alpha * align + beta * (dis_visual + dis_textual)
        return cls(bpr, align, dis_visual, dis_textual, total)

    def to_json(self, step: int) -> str:
        d = asdict(self)
        return json.dumps({"step": step, "bpr": d["bpr"], "align": d["align"],
                           "dis_v": d["dis_visual"], "dis_t": d["dis_textual"], "total": d["total"]})
