"""The stochastic world: low-rank task matrix, per-round decision sets, rewards.

Everything is a pure function of (parameters, RngStream), so a full trajectory
replays bitwise-identically and distinct repetitions get independent streams.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, SeedSequence, default_rng

from .errors import ConfigError
from .linalg import RANK_TOL, singular_values

ARM_KINDS = ("gaussian_iid", "gaussian_correlated", "uniform_sphere")

PSD_TOL = 1e-10


@dataclass(frozen=True)
class RngStream:
    """Reproducible, statistically independent stream keyed by (seed, stream_id)."""

    seed: int
    stream_id: int = 0

    def generator(self) -> Generator:
        return default_rng(SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,)))


def _as_generator(rng) -> Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng)!r}")


def _default_correlated_cov(d: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass
class ArmDistribution:
    """K arm marginals under one of the shipped symmetric sub-Gaussian kinds.

    covariances are the effective E[x x^T] per arm: identity for gaussian_iid,
    I/d for uniform_sphere, user-supplied (or an AR(1) default) for
    gaussian_correlated.
    """

    kind: str
    dim: int
    n_arms: int
    covariances: list[np.ndarray] | None = None
    _sqrts: list[np.ndarray] = field(init=False, repr=False, default_factory=list)

    def __post_init__(self):
        if self.kind not in ARM_KINDS:
            raise ConfigError(f"unknown arm kind {self.kind!r}; expected one of {ARM_KINDS}")
        if self.n_arms < 1:
            raise ConfigError("need at least one arm")
        if self.dim < 1:
            raise ConfigError("dimension must be positive")
        d, k = self.dim, self.n_arms
        if self.kind == "gaussian_iid":
            if self.covariances is not None:
                raise ConfigError("gaussian_iid does not accept covariances")
            self.covariances = [np.eye(d) for _ in range(k)]
        elif self.kind == "uniform_sphere":
            if self.covariances is not None:
                raise ConfigError("uniform_sphere does not accept covariances")
            self.covariances = [np.eye(d) / d for _ in range(k)]
        else:
            if self.covariances is None:
                self.covariances = [_default_correlated_cov(d) for _ in range(k)]
            if len(self.covariances) != k:
                raise ConfigError(f"expected {k} covariances, got {len(self.covariances)}")
            checked = []
            for i, cov in enumerate(self.covariances):
                c = np.asarray(cov, dtype=float)
                if c.shape != (d, d):
                    raise ConfigError(f"covariance {i} has shape {c.shape}, expected {(d, d)}")
                if np.max(np.abs(c - c.T)) > PSD_TOL:
                    raise ConfigError(f"covariance {i} is not symmetric")
                if np.linalg.eigvalsh(c).min() < -PSD_TOL:
                    raise ConfigError(f"covariance {i} is not positive semi-definite")
                checked.append(c)
            self.covariances = checked
            self._sqrts = [_psd_sqrt(c) for c in checked]

    @property
    def sigma_op_max(self) -> float:
        """max_k of the square root of the covariance operator norm."""
        return float(
            max(np.sqrt(max(np.linalg.eigvalsh(c).max(), 0.0)) for c in self.covariances)
        )

    def arms_from_z(self, z: np.ndarray) -> np.ndarray:
        """Map latent draws z (K x d, iid entries) to arm vectors; odd in z."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n_arms, self.dim):
            raise ValueError(f"z must have shape {(self.n_arms, self.dim)}")
        if self.kind == "gaussian_iid":
            return z.copy()
        if self.kind == "uniform_sphere":
            norms = np.linalg.norm(z, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            return z / norms
        return np.stack([self._sqrts[k] @ z[k] for k in range(self.n_arms)])


@dataclass(frozen=True)
class DecisionSet:
    """The K candidate arm vectors offered to one task at one round (K x d)."""

    arms: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.arms, dtype=float)
        if a.ndim != 2:
            raise ValueError("arms must be a K x d matrix")
        if not np.all(np.isfinite(a)):
            raise ValueError("arms contain non-finite values")
        object.__setattr__(self, "arms", a)

    @property
    def n_arms(self) -> int:
        return self.arms.shape[0]

    @property
    def dim(self) -> int:
        return self.arms.shape[1]


@dataclass(frozen=True)
class TaskMatrixSpec:
    dim: int
    n_tasks: int
    rank: int
    column_norm_cap: float = 1.0

    def __post_init__(self):
        if self.rank < 1 or self.rank > min(self.dim, self.n_tasks):
            raise ConfigError(
                f"rank must lie in [1, min(d, T)] = [1, {min(self.dim, self.n_tasks)}], "
                f"got {self.rank}"
            )
        if self.column_norm_cap <= 0:
            raise ConfigError("column_norm_cap must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")


def generate_task_matrix(spec: TaskMatrixSpec, rng) -> np.ndarray:
    """Low-rank d x T matrix: Gaussian factor product, largest column norm = cap."""
    g = _as_generator(rng)
    left = g.standard_normal((spec.dim, spec.rank))
    right = g.standard_normal((spec.rank, spec.n_tasks))
    w = left @ right
    top = float(np.linalg.norm(w, axis=0).max())
    if top == 0.0:  # probability zero, but keep the contract total
        raise RuntimeError("degenerate zero task matrix")
    w *= spec.column_norm_cap / top
    got = int(np.sum(singular_values(w) > RANK_TOL))
    if got != spec.rank:
        raise RuntimeError(f"generated matrix has numerical rank {got}, expected {spec.rank}")
    return w


def sample_decision_sets(dist: ArmDistribution, n_tasks: int, rng) -> list[DecisionSet]:
    """One independent K-arm decision set per task."""
    g = _as_generator(rng)
    z = g.standard_normal((n_tasks, dist.n_arms, dist.dim))
    return [DecisionSet(dist.arms_from_z(z[t])) for t in range(n_tasks)]


def reward(x, w, noise: NoiseSpec, rng) -> float:
    """Noisy linear reward x . w + sigma * g."""
    g = _as_generator(rng)
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != w.shape:
        raise ValueError("x and w must have the same shape")
    return float(x @ w + noise.sigma * g.standard_normal())


def best_arm(ds: DecisionSet, w) -> tuple[int, float]:
    """Smallest index attaining max_k x_k . w, and that value."""
    scores = ds.arms @ np.asarray(w, dtype=float)
    idx = int(np.argmax(scores))
    return idx, float(scores[idx])


class EnvironmentReplay:
    """A full pre-drawn trajectory shared by every policy in one repetition.

    Holds the task matrix, every round's decision sets, the reward-noise draws
    (indexed by round and task, independent of the arm chosen), and the
    round-1 random arm choices, so that reward differences between policies
    are attributable to their decisions alone.
    """

    def __init__(
        self,
        task_spec: TaskMatrixSpec,
        arm_dist: ArmDistribution,
        n_rounds: int,
        noise: NoiseSpec,
        master_seed: int,
        repetition: int,
        fix_task_matrix: bool = False,
    ):
        if n_rounds < 1:
            raise ConfigError("need at least one round")
        self.task_spec = task_spec
        self.arm_dist = arm_dist
        self.n_rounds = n_rounds
        self.noise_spec = noise
        self.repetition = repetition

        d, big_t, k = task_spec.dim, task_spec.n_tasks, arm_dist.n_arms
        root = SeedSequence(entropy=master_seed, spawn_key=(repetition,))
        w_seq, arms_seq, noise_seq, init_seq = root.spawn(4)
        if fix_task_matrix and repetition != 0:
            w_seq = SeedSequence(entropy=master_seed, spawn_key=(0,)).spawn(1)[0]
        self.task_matrix = generate_task_matrix(task_spec, default_rng(w_seq))

        z = default_rng(arms_seq).standard_normal((n_rounds, big_t, k, d))
        self._sets = [
            [DecisionSet(arm_dist.arms_from_z(z[i, t])) for t in range(big_t)]
            for i in range(n_rounds)
        ]
        self.noise = noise.sigma * default_rng(noise_seq).standard_normal((n_rounds, big_t))
        self.round_one_choices = default_rng(init_seq).integers(0, k, size=big_t)

    def decision_sets(self, n: int) -> list[DecisionSet]:
        """Decision sets for round n (1-based)."""
        return self._sets[n - 1]

    def noise_at(self, n: int) -> np.ndarray:
        return self.noise[n - 1]

    def arm_stream_checksum(self) -> str:
        h = hashlib.sha256()
        for round_sets in self._sets:
            for ds in round_sets:
                h.update(ds.arms.tobytes())
        return h.hexdigest()
