"""Monte-Carlo and quadrature checks of angle concentration and the CLUB upper bound."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from scipy import integrate, stats

from .objectives import VariationalEstimator, club_estimate
from .optim import Adam


def _log_norm(n: int) -> float:
    return math.lgamma(n / 2) - math.lgamma((n - 1) / 2) - 0.5 * math.log(math.pi)


def angle_pdf(n: int, theta):
    """Density of the angle between two isotropic random vectors in R^n."""
    if n < 2:
        raise ValueError(f"dimension must be >= 2, got {n}")
    theta = np.asarray(theta, dtype=np.float64)
    if np.any((theta < 0) | (theta > math.pi)):
        raise ValueError("theta must lie in [0, pi]")
    if n == 2:
        return np.full_like(theta, 1.0 / math.pi)[()]
    s = np.sin(theta)
    with np.errstate(divide="ignore"):
        out = np.where(s > 0, np.exp(_log_norm(n) + (n - 2) * np.log(np.where(s > 0, s, 1.0))), 0.0)
    return out[()]


def cosine_pdf(n: int, eta):
    """Density of the cosine of that angle, on [-1, 1]."""
    if n < 2:
        raise ValueError(f"dimension must be >= 2, got {n}")
    eta = np.asarray(eta, dtype=np.float64)
    if np.any(np.abs(eta) > 1):
        raise ValueError("|eta| must be <= 1")
    base = 1.0 - eta ** 2
    power = 0.5 * (n - 3)
    if power == 0:
        return np.full_like(eta, math.exp(_log_norm(n)))[()]
    with np.errstate(divide="ignore"):
        return np.exp(_log_norm(n) + power * np.log(base))[()]


def variance_quadrature(n: int) -> float:
    """Var(theta) by adaptive quadrature of (theta - pi/2)^2 p_n(theta)."""
    if n < 2:
        raise ValueError(f"dimension must be >= 2, got {n}")
    val, _ = integrate.quad(lambda t: (t - math.pi / 2) ** 2 * float(angle_pdf(n, t)), 0.0, math.pi,
                            points=[math.pi / 2], epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


@dataclass
class AngleStats:
    dim: int
    n_samples: int
    mean: float
    var: float
    bin_edges: list[float]
    counts: list[int]
    chi2: float
    chi2_dof: int
    chi2_pvalue: float

    def to_dict(self) -> dict:
        return asdict(self)


def sample_angles(n: int, N: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((N, n))
    y = rng.standard_normal((N, n))
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    bad = (nx == 0) | (ny == 0)
    while bad.any():
        x[bad] = rng.standard_normal((int(bad.sum()), n))
        y[bad] = rng.standard_normal((int(bad.sum()), n))
        nx, ny = np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)
        bad = (nx == 0) | (ny == 0)
    cos = np.einsum("ij,ij->i", x, y) / (nx * ny)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def _bin_probs(n: int, edges: np.ndarray) -> np.ndarray:
    return np.array([integrate.quad(lambda t: float(angle_pdf(n, t)), a, b, epsabs=1e-14)[0]
                     for a, b in zip(edges[:-1], edges[1:])])


def chi2_fit(theta: np.ndarray, n: int, bins: int = 50, min_expected: float = 5.0):
    """Pearson chi^2 of an angle sample against ``angle_pdf``.

    Adjacent bins are pooled until each pooled cell expects at least
    ``min_expected`` draws.
    """
    edges = np.linspace(0.0, math.pi, bins + 1)
    counts, _ = np.histogram(theta, bins=edges)
    expected = _bin_probs(n, edges) * len(theta)
    obs_cells, exp_cells = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(counts, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_cells.append(o_acc)
            exp_cells.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        obs_cells[-1] += o_acc
        exp_cells[-1] += e_acc
    obs = np.array(obs_cells)
    exp = np.array(exp_cells)
    exp *= obs.sum() / exp.sum()
    chi2 = float(((obs - exp) ** 2 / exp).sum())
    dof = len(obs) - 1
    return edges, counts, chi2, dof, float(stats.chi2.sf(chi2, dof))


def sample_angle_distribution(n: int, N: int, rng: np.random.Generator, bins: int = 50) -> AngleStats:
    if n < 2:
        raise ValueError(f"dimension must be >= 2, got {n}")
    if N < 1000:
        raise ValueError("need at least 1000 samples")
    theta = sample_angles(n, N, rng)
    edges, counts, chi2, dof, p = chi2_fit(theta, n, bins)
    return AngleStats(n, N, float(theta.mean()), float(theta.var()), edges.tolist(), counts.tolist(),
                      chi2, dof, p)


def verify_angles(dim: int = 64, samples: int = 100_000, seed: int = 0) -> dict:
    """Mean, variance and chi^2 checks for the sampled angle distribution."""
    st = sample_angle_distribution(dim, samples, np.random.default_rng(seed))
    approx_var = 1.0 / (dim - 2) if dim > 2 else math.pi ** 2 / 12
    checks = {
        "mean_within_0.005_of_pi_over_2": abs(st.mean - math.pi / 2) <= 0.005,
        "variance_within_15pct_of_1_over_n_minus_2": abs(st.var - approx_var) <= 0.15 * approx_var,
        "chi2_not_rejected_at_0.001": st.chi2_pvalue > 0.001,
    }
    return {
        "dim": dim,
        "samples": samples,
        "mean": st.mean,
        "variance": st.var,
        "variance_approx": approx_var,
        "variance_exact": variance_quadrature(dim),
        "chi2": st.chi2,
        "chi2_dof": st.chi2_dof,
        "chi2_pvalue": st.chi2_pvalue,
        "checks": checks,
        "passed": all(checks.values()),
    }


# ------------------------------------------------------------------------ CLUB


def gaussian_mi(rho: float, dim: int = 1) -> float:
    return -0.5 * dim * math.log(1.0 - rho ** 2)


def correlated_gaussians(rho: float, n: int, dim: int, rng: np.random.Generator):
    """Pairs (g, q) with per-coordinate correlation ``rho`` and unit variances."""
    q = rng.standard_normal((n, dim))
    g = rho * q + math.sqrt(1.0 - rho ** 2) * rng.standard_normal((n, dim))
    return torch.from_numpy(g), torch.from_numpy(q)


def fit_estimator(est: VariationalEstimator, g, q, steps: int, lr: float = 1e-2) -> list[float]:
    opt = Adam(list(est.parameters()), lr=lr)
    trace = []
    for _ in range(steps):
        opt.zero_grad()
        ll = est.log_likelihood(g, q)
        (-ll).backward()
        opt.step()
        trace.append(float(ll.detach()))
    opt.zero_grad()
    return trace


@dataclass
class ClubResult:
    rho: float
    dim: int
    estimate: float
    true_mi: float
    final_loglik: float


def club_gaussian_experiment(rho: float, n_samples: int = 10_000, train_steps: int = 1500, dim: int = 1,
                             hidden: int = 16, seed: int = 0) -> ClubResult:
    """Fit q(g|q) by likelihood on one sample, report CLUB on a fresh sample."""
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    rng = np.random.default_rng(seed)
    g, q = correlated_gaussians(rho, n_samples, dim, rng)
    est = VariationalEstimator(dim, dim, hidden, rng=rng)
    trace = fit_estimator(est, g, q, train_steps)
    g2, q2 = correlated_gaussians(rho, n_samples, dim, rng)
    with torch.no_grad():
        estimate = float(club_estimate(est, g2, q2))
    return ClubResult(rho, dim, estimate, gaussian_mi(rho, dim), trace[-1])


@dataclass
class DistancingResult:
    initial_rho: float
    final_rho: float
    initial_estimate: float
    final_estimate: float


def club_distancing_experiment(initial_rho: float = 0.9, n_samples: int = 4096, outer_steps: int = 600,
                               hidden: int = 16, seed: int = 0) -> DistancingResult:
    """Minimize CLUB over a learnable mixing weight while q(g|q) chases it.

    ``q = w g + noise``; the distancing step updates ``w`` alone, the
    estimator takes one likelihood step per outer step. Driving the bound
    down drives ``w`` (and the dependence) to zero.
    """
    rng = np.random.default_rng(seed)
    g = torch.from_numpy(rng.standard_normal((n_samples, 1)))
    noise = torch.from_numpy(rng.standard_normal((n_samples, 1)))
    w0 = initial_rho / math.sqrt(1.0 - initial_rho ** 2)
    w = torch.tensor(w0, dtype=torch.float64, requires_grad=True)
    est = VariationalEstimator(1, 1, hidden, rng=rng)
    fit_estimator(est, g, w.detach() * g + noise, 300)
    with torch.no_grad():
        start = float(club_estimate(est, g, w * g + noise))
    est_opt = Adam(list(est.parameters()), lr=1e-2)
    w_opt = Adam([w], lr=1e-2)
    for _ in range(outer_steps):
        q = (w * g + noise).detach()
        est_opt.zero_grad()
        (-est.log_likelihood(g, q)).backward()
        est_opt.step()
        est_opt.zero_grad()
        w_opt.zero_grad()
        bound = club_estimate(est, g, w * g + noise)
        (gw,) = torch.autograd.grad(bound, [w])
        w.grad = gw
        w_opt.step()
    wf = float(w.detach())
    # re-fit the estimator from scratch on fresh data at the final mixing weight
    g2 = torch.from_numpy(rng.standard_normal((n_samples, 1)))
    q2 = wf * g2 + torch.from_numpy(rng.standard_normal((n_samples, 1)))
    fresh = VariationalEstimator(1, 1, hidden, rng=rng)
    fit_estimator(fresh, g2[: n_samples // 2], q2[: n_samples // 2], 800)
    with torch.no_grad():
        final = float(club_estimate(fresh, g2[n_samples // 2:], q2[n_samples // 2:]))
    return DistancingResult(initial_rho, wf / math.sqrt(1.0 + wf ** 2), start, final)


def verify_club(rho: float, n_samples: int = 10_000, train_steps: int = 1500, seed: int = 0) -> dict:
    res = club_gaussian_experiment(rho, n_samples, train_steps, seed=seed)
    checks = {
        "estimate_at_least_true_minus_0.05": res.estimate >= res.true_mi - 0.05,
        "estimate_at_most_true_plus_0.15": res.estimate <= res.true_mi + 0.15,
    }
    if rho == 0:
        checks["estimate_within_0.05_of_zero"] = abs(res.estimate) <= 0.05
    return {**asdict(res), "checks": checks, "passed": all(checks.values())}


def verify_distancing(initial_rho: float = 0.9, seed: int = 0) -> dict:
    res = club_distancing_experiment(initial_rho, seed=seed)
    checks = {"final_estimate_below_0.05": res.final_estimate < 0.05}
    return {**asdict(res), "checks": checks, "passed": all(checks.values())}


def verify_variance(dims=(8, 16, 32, 64, 128), tol: float = 0.10) -> dict:
    """Exact Var(theta) against the 1/(n-2) approximation, plus monotone decay."""
    exact = [variance_quadrature(n) for n in dims]
    rows = [{"n": n, "exact": v, "approx": 1 / (n - 2), "rel_err": abs(v * (n - 2) - 1)} for n, v in zip(dims, exact)]
    checks = {
        f"within_{tol:g}_of_1_over_n_minus_2": all(r["rel_err"] <= tol for r in rows),
        "strictly_decreasing": all(a > b for a, b in zip(exact, exact[1:])),
    }
    return {"rows": rows, "checks": checks, "passed": all(checks.values())}
