"""Regret/reward bookkeeping and theory-derived diagnostics.

The diagnostics are simulation-only introspection: they consume recorded
noise and covariances that a deployed policy would never see.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DiagnosticUnavailableError
from .estimator import LambdaRule, MultiTaskData, lambda_schedule
from .linalg import RANK_TOL, SvdResult, nuclear_norm, operator_norm

N0_SCAN_LIMIT = 10**9


@dataclass
class RoundRecord:
    """One output row: per-round averaged cumulative metrics for one policy run."""

    policy: str
    repetition: int
    round: int
    avg_cum_reward: float
    avg_cum_regret: float
    frob_error: float | None = None
    lambda_n: float | None = None
    solver_converged: bool = True
    rank_estimate: int | None = None
    avg_cum_reward_realized: float | None = None  # side channel, not in results.csv


@dataclass
class DiagnosticsReport:
    dn_event_frequency: float | None = None
    error_scaling_slope: float | None = None
    rsc_probe_value: float | None = None
    n0_report: int | None = None


def instantaneous_regret(ds, chosen: int, w) -> float:
    """Expected-reward gap between the best arm and the chosen one; >= 0."""
    scores = ds.arms @ np.asarray(w, dtype=float)
    if not 0 <= chosen < scores.size:
        raise ValueError(f"chosen index {chosen} out of range")
    return float(scores.max() - scores[chosen])


def cumulative_metrics(
    expected_rewards,
    regrets,
    *,
    policy: str,
    repetition: int,
    realized_rewards=None,
    frob_errors=None,
    lambdas=None,
    converged_flags=None,
    rank_estimates=None,
) -> list[RoundRecord]:
    """Running sums over tasks and rounds, divided by T, one record per round.

    expected_rewards and regrets are (N, T); optional per-round sequences
    attach estimator telemetry to each record.
    """
    expected_rewards = np.asarray(expected_rewards, dtype=float)
    regrets = np.asarray(regrets, dtype=float)
    if expected_rewards.shape != regrets.shape or expected_rewards.ndim != 2:
        raise ValueError("expected_rewards and regrets must both be (N, T)")
    n_rounds, n_tasks = expected_rewards.shape
    cum_reward = np.cumsum(expected_rewards.sum(axis=1)) / n_tasks
    cum_regret = np.cumsum(regrets.sum(axis=1)) / n_tasks
    cum_realized = None
    if realized_rewards is not None:
        realized_rewards = np.asarray(realized_rewards, dtype=float)
        if realized_rewards.shape != expected_rewards.shape:
            raise ValueError("realized_rewards must match expected_rewards shape")
        cum_realized = np.cumsum(realized_rewards.sum(axis=1)) / n_tasks

    def pick(seq, i):
        return None if seq is None else seq[i]

    records = []
    for i in range(n_rounds):
        records.append(
            RoundRecord(
                policy=policy,
                repetition=repetition,
                round=i + 1,
                avg_cum_reward=float(cum_reward[i]),
                avg_cum_regret=float(cum_regret[i]),
                frob_error=pick(frob_errors, i),
                lambda_n=pick(lambdas, i),
                solver_converged=True if converged_flags is None else bool(converged_flags[i]),
                rank_estimate=pick(rank_estimates, i),
                avg_cum_reward_realized=None if cum_realized is None else float(cum_realized[i]),
            )
        )
    return records


def noise_matrix(histories: MultiTaskData, noises) -> np.ndarray:
    """Assemble D_n (d x T): column t is sum_i eta_{t,i} x_{t,i}."""
    noises = np.asarray(noises, dtype=float)
    n, big_t = histories.n_samples, histories.n_tasks
    if noises.shape != (n, big_t):
        raise DiagnosticUnavailableError(
            f"need recorded noise of shape {(n, big_t)}, got {noises.shape}"
        )
    d = histories.dim
    out = np.zeros((d, big_t))
    for t, h in enumerate(histories.tasks):
        out[:, t] = h.design.T @ noises[:, t]
    return out


def dn_event_check(histories: MultiTaskData, noises, rule: LambdaRule, n: int,
                   horizon: int | None = None) -> bool:
    """Whether the realized noise-design matrix satisfies opnorm(D_n)/n <= lambda_n."""
    if n != histories.n_samples:
        raise ValueError("n must equal the recorded sample count")
    d_n = noise_matrix(histories, noises)
    lam = lambda_schedule(rule, n, histories.dim, histories.n_tasks, horizon or n)
    return operator_norm(d_n, tol=1e-10) / n <= lam


def _effective_covariances(cov, n_tasks: int, dim: int) -> np.ndarray:
    """Accept a single shared d x d covariance or a per-task list; return (T, d, d)."""
    if isinstance(cov, (list, tuple)):
        mats = [np.asarray(c, dtype=float) for c in cov]
        if len(mats) != n_tasks:
            raise ValueError(f"expected {n_tasks} covariance blocks, got {len(mats)}")
    else:
        mats = [np.asarray(cov, dtype=float)] * n_tasks
    for c in mats:
        if c.shape != (dim, dim):
            raise ValueError(f"covariance block must be {dim} x {dim}")
    return np.stack(mats)


def rsc_probe(cov, w_svd: SvdResult, samples: int, rng) -> float:
    """Sampled upper bound on the restricted-convexity constant.

    Draws random matrices inside the low-rank-aligned cone (aligned part plus
    a feasibility-scaled orthogonal perturbation) and returns the minimum of
    ||Vec(delta)||_cov^2 / (2 ||Vec(delta)||_2^2). An upper bound of the true
    restricted minimum, non-increasing in `samples`.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    keep = w_svd.singular_values > RANK_TOL
    u = w_svd.u[:, keep]
    v = w_svd.v[:, keep]
    d = u.shape[0]
    big_t = v.shape[0]
    r = u.shape[1]
    sig = _effective_covariances(cov, big_t, d)
    if not np.any(sig):
        return 0.0
    pu = np.eye(d) - u @ u.T
    pv = np.eye(big_t) - v @ v.T
    best = math.inf
    for _ in range(samples):
        aligned = u @ rng.standard_normal((r, big_t)) + rng.standard_normal((d, r)) @ v.T
        orth = pu @ rng.standard_normal((d, big_t)) @ pv
        nuc_aligned = nuclear_norm(aligned)
        nuc_orth = nuclear_norm(orth)
        if nuc_orth > 0:
            scale = rng.uniform(0.0, 1.0) * 3.0 * nuc_aligned / nuc_orth
        else:
            scale = 0.0
        delta = aligned + scale * orth
        weighted = np.einsum("tij,jt->it", sig, delta)
        # reduce both quadratic forms through the identical code path so the
        # isotropic case (weighted bitwise-equal to delta) yields exactly 1/2
        num = float(np.sum(delta * weighted))
        den = float(np.sum(delta * delta))
        if den == 0.0:
            continue
        best = min(best, num / (2.0 * den))
    return float(best)


def n0_report(d: int, big_t: int, r: int, delta: float, sigma_op_max: float,
              c_scale: float) -> int:
    """Smallest N with N >= c_scale * maxcov^2 * ((r log d) log(4TN/delta))^2.

    sigma_op_max uses the same convention as LambdaRule: the square root of
    the largest covariance operator norm (so maxcov = sigma_op_max^2).
    """
    if min(d, big_t, r) < 1 or not (0 < delta < 1) or sigma_op_max <= 0 or c_scale <= 0:
        raise ConfigError("n0_report arguments must be positive with delta in (0, 1)")
    cov_sq = sigma_op_max**4

    def bound(n):
        return c_scale * cov_sq * ((r * math.log(d)) * math.log(4.0 * big_t * n / delta)) ** 2

    n = 1
    while n < bound(n):
        nxt = int(math.ceil(bound(n)))
        n = max(n + 1, nxt)
        if n > N0_SCAN_LIMIT:
            raise ValueError(f"no feasible round count below {N0_SCAN_LIMIT}")
    while n > 1 and (n - 1) >= bound(n - 1):
        n -= 1
    return n


def estimation_error(what, truth) -> float:
    """Frobenius distance between an estimate and the true matrix."""
    a = np.asarray(what, dtype=float)
    b = np.asarray(truth, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))
