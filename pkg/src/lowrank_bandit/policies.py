"""Round-by-round bandit policies over a shared environment.

All four policies are greedy: at round 1 they pick uniformly at random (their
estimate is the zero matrix, so this is uniform tie-breaking), afterwards each
task picks the arm maximizing x . estimate_column with smallest-index
tie-breaking. They differ only in how the estimate is refreshed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .estimator import (
    LambdaRule,
    MultiTaskData,
    SolverOptions,
    TaskHistory,
    fit_trace_norm,
    lambda_schedule,
)
from .linalg import RANK_TOL, svd

POLICY_KINDS = ("tracenorm", "itl", "oracle", "mlingreedy")

DEFAULT_RIDGE = 1.0
ALS_ALTERNATIONS = 15


@dataclass(frozen=True)
class OracleBasis:
    """The true shared representation: d x r with orthonormal columns."""

    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if b.ndim != 2:
            raise ConfigError("oracle basis must be a d x r matrix")
        gram = b.T @ b
        if np.max(np.abs(gram - np.eye(b.shape[1]))) > 1e-10:
            raise ConfigError("oracle basis columns must be orthonormal")
        object.__setattr__(self, "b", b)

    @classmethod
    def from_task_matrix(cls, w) -> "OracleBasis":
        """Top-rank left singular vectors of the true task matrix."""
        r = svd(np.asarray(w, dtype=float))
        keep = r.singular_values > RANK_TOL
        return cls(r.u[:, keep])


class GreedyPolicy:
    """Common state and arm selection; subclasses implement update()."""

    kind: str = "base"

    def __init__(self, dim: int, n_tasks: int):
        self.dim = dim
        self.n_tasks = n_tasks
        self.estimate = np.zeros((dim, n_tasks))
        self.round = 0
        self._xs: list[list[np.ndarray]] = [[] for _ in range(n_tasks)]
        self._ys: list[list[float]] = [[] for _ in range(n_tasks)]
        self.last_converged = True

    def select_arms(self, decision_sets, rng) -> list[int]:
        if len(decision_sets) != self.n_tasks:
            raise ValueError("one decision set per task required")
        if self.round == 0:
            k = decision_sets[0].n_arms
            return [int(i) for i in rng.integers(0, k, size=self.n_tasks)]
        return [
            int(np.argmax(ds.arms @ self.estimate[:, t]))
            for t, ds in enumerate(decision_sets)
        ]

    def _record(self, chosen_arms, rewards):
        chosen_arms = np.asarray(chosen_arms, dtype=float)
        rewards = np.asarray(rewards, dtype=float)
        if chosen_arms.shape != (self.n_tasks, self.dim):
            raise ValueError("chosen_arms must be T x d")
        if rewards.shape != (self.n_tasks,):
            raise ValueError("one reward per task required")
        for t in range(self.n_tasks):
            self._xs[t].append(chosen_arms[t])
            self._ys[t].append(float(rewards[t]))
        self.round += 1

    def history_data(self) -> MultiTaskData:
        return MultiTaskData(
            [TaskHistory(np.array(self._xs[t]), np.array(self._ys[t]))
             for t in range(self.n_tasks)]
        )

    def update(self, chosen_arms, rewards):  # pragma: no cover - abstract
        raise NotImplementedError


class TraceNormBanditPolicy(GreedyPolicy):
    """Greedy on the trace-norm regularized estimate, refit every round."""

    kind = "tracenorm"

    def __init__(self, dim, n_tasks, horizon, lambda_rule: LambdaRule,
                 solver_options: SolverOptions | None = None):
        super().__init__(dim, n_tasks)
        self.horizon = horizon
        self.lambda_rule = lambda_rule
        self.solver_options = solver_options or SolverOptions()
        self.last_lambda: float | None = None

    def update(self, chosen_arms, rewards):
        self._record(chosen_arms, rewards)
        n = self.round
        lam = lambda_schedule(self.lambda_rule, n, self.dim, self.n_tasks, self.horizon)
        opts = SolverOptions(
            max_iterations=self.solver_options.max_iterations,
            objective_tolerance=self.solver_options.objective_tolerance,
            warm_start=self.estimate,
            polish_iterations=self.solver_options.polish_iterations,
        )
        res = fit_trace_norm(self.history_data(), lam, opts)
        self.estimate = res.estimate
        self.last_lambda = lam
        self.last_converged = res.converged


class ITLPolicy(GreedyPolicy):
    """Independent per-task ridge regression in the full d-dimensional space."""

    kind = "itl"

    def __init__(self, dim, n_tasks, ridge: float = DEFAULT_RIDGE):
        super().__init__(dim, n_tasks)
        if ridge <= 0:
            raise ConfigError("ridge must be positive")
        self.ridge = ridge
        self._gram = [ridge * np.eye(dim) for _ in range(n_tasks)]
        self._moment = [np.zeros(dim) for _ in range(n_tasks)]

    def update(self, chosen_arms, rewards):
        self._record(chosen_arms, rewards)
        for t in range(self.n_tasks):
            x = self._xs[t][-1]
            self._gram[t] += np.outer(x, x)
            self._moment[t] += self._ys[t][-1] * x
            self.estimate[:, t] = np.linalg.solve(self._gram[t], self._moment[t])


class ProjectedOraclePolicy(GreedyPolicy):
    """Ridge regression in the true r-dimensional representation."""

    kind = "oracle"

    def __init__(self, dim, n_tasks, basis: OracleBasis, ridge: float = DEFAULT_RIDGE):
        super().__init__(dim, n_tasks)
        if basis.b.shape[0] != dim:
            raise ConfigError("oracle basis dimension mismatch")
        if ridge <= 0:
            raise ConfigError("ridge must be positive")
        self.basis = basis
        self.ridge = ridge
        r = basis.b.shape[1]
        self._gram = [ridge * np.eye(r) for _ in range(n_tasks)]
        self._moment = [np.zeros(r) for _ in range(n_tasks)]

    def update(self, chosen_arms, rewards):
        self._record(chosen_arms, rewards)
        b = self.basis.b
        for t in range(self.n_tasks):
            u = b.T @ self._xs[t][-1]
            self._gram[t] += np.outer(u, u)
            self._moment[t] += self._ys[t][-1] * u
            self.estimate[:, t] = b @ np.linalg.solve(self._gram[t], self._moment[t])


def mlingreedy_rank(mode: str, true_rank: int, dim: int, n_tasks: int) -> int:
    """Rank parameter per sweep mode: true r, min(2r, d, T), or max(floor(r/2), 1)."""
    if mode == "true":
        return true_rank
    if mode == "over":
        return min(2 * true_rank, dim, n_tasks)
    if mode == "under":
        return max(true_rank // 2, 1)
    raise ConfigError(f"unknown mlingreedy rank mode {mode!r}")


class MLinGreedyStylePolicy(GreedyPolicy):
    """Epoch-doubling greedy with an explicit rank-constrained factorization.

    At rounds 1, 2, 4, 8, ... the estimate is refit as B C with B (d x rank)
    and C (rank x T) by alternating least squares; between boundaries the
    frozen estimate drives greedy selection. Only the comparison baseline's
    core mechanics (epochs, factorization, rank parameter) are implemented;
    its exploration schedule is not, hence "style".
    """

    kind = "mlingreedy"

    def __init__(self, dim, n_tasks, rank_param: int,
                 n_alternations: int = ALS_ALTERNATIONS):
        super().__init__(dim, n_tasks)
        if not (1 <= rank_param <= min(dim, n_tasks)):
            raise ConfigError("rank_param must lie in [1, min(d, T)]")
        self.rank_param = rank_param
        self.n_alternations = n_alternations
        self.als_diverged = False
        self._factors: tuple[np.ndarray, np.ndarray] | None = None

    @staticmethod
    def _is_epoch_boundary(n: int) -> bool:
        return n & (n - 1) == 0  # powers of two

    def _als_objective(self, designs, responses, b, c) -> float:
        return sum(
            float(np.sum((responses[t] - designs[t] @ (b @ c[:, t])) ** 2))
            for t in range(self.n_tasks)
        )

    def _refit(self):
        rank = self.rank_param
        designs = [np.array(self._xs[t]) for t in range(self.n_tasks)]
        responses = [np.array(self._ys[t]) for t in range(self.n_tasks)]
        per_task = np.stack(
            [np.linalg.lstsq(designs[t], responses[t], rcond=None)[0]
             for t in range(self.n_tasks)],
            axis=1,
        )
        b = svd(per_task).u[:, :rank]
        if b.shape[1] < rank:  # degenerate early rounds
            b = np.pad(b, ((0, 0), (0, rank - b.shape[1])))
        c = np.zeros((rank, self.n_tasks))
        prev_obj = np.inf
        best = None
        for _ in range(self.n_alternations):
            for t in range(self.n_tasks):
                c[:, t] = np.linalg.lstsq(designs[t] @ b, responses[t], rcond=None)[0]
            # row for sample (t, i): kron(c_t, x_{t,i}) against vec(B) in column-major order
            rows = [np.kron(c[:, t][None, :], designs[t]) for t in range(self.n_tasks)]
            flat = np.linalg.lstsq(np.vstack(rows), np.concatenate(responses), rcond=None)[0]
            b = flat.reshape(self.dim, rank, order="F")
            obj = self._als_objective(designs, responses, b, c)
            if obj > prev_obj * (1 + 1e-12):
                self.als_diverged = True
                break
            prev_obj = obj
            best = (b.copy(), c.copy())
        if best is not None:
            self._factors = best
            self.estimate = best[0] @ best[1]

    def update(self, chosen_arms, rewards):
        self._record(chosen_arms, rewards)
        if self._is_epoch_boundary(self.round):
            self._refit()


def init_policy(
    kind: str,
    dim: int,
    n_tasks: int,
    horizon: int,
    *,
    lambda_rule: LambdaRule | None = None,
    solver_options: SolverOptions | None = None,
    ridge: float = DEFAULT_RIDGE,
    oracle_basis: OracleBasis | None = None,
    mlingreedy_rank_param: int | None = None,
) -> GreedyPolicy:
    """Construct a fresh policy at round 0 with a zero estimate."""
    if kind == "tracenorm":
        return TraceNormBanditPolicy(
            dim, n_tasks, horizon, lambda_rule or LambdaRule(), solver_options
        )
    if kind == "itl":
        return ITLPolicy(dim, n_tasks, ridge)
    if kind == "oracle":
        if oracle_basis is None:
            raise ConfigError("oracle policy requires the true representation basis")
        return ProjectedOraclePolicy(dim, n_tasks, oracle_basis, ridge)
    if kind == "mlingreedy":
        if mlingreedy_rank_param is None:
            raise ConfigError("mlingreedy policy requires a rank parameter")
        return MLinGreedyStylePolicy(dim, n_tasks, mlingreedy_rank_param)
    raise ConfigError(f"unknown policy kind {kind!r}; expected one of {POLICY_KINDS}")
