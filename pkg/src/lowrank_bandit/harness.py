"""Experiment orchestration: config, repetition loop, persistence, aggregation.

One repetition draws a single environment replay; every requested policy then
runs against that same replay (identical decision sets and noise draws), so
reward differences between policies reflect decisions only.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.random import SeedSequence, default_rng

from .environment import (
    ARM_KINDS,
    ArmDistribution,
    EnvironmentReplay,
    NoiseSpec,
    TaskMatrixSpec,
)
from .errors import ConfigError
from .estimator import LambdaRule
from .linalg import numerical_rank, svd
from .metrics import (
    DiagnosticsReport,
    RoundRecord,
    cumulative_metrics,
    dn_event_check,
    estimation_error,
    n0_report,
    rsc_probe,
)
from .policies import POLICY_KINDS, OracleBasis, init_policy, mlingreedy_rank

ARTIFACT_VERSION = "lowrank-bandit/0.1.0"

RESULTS_HEADER = (
    "policy,repetition,round,avg_cum_reward,avg_cum_regret,"
    "frob_error,lambda,solver_converged,rank_estimate"
)

THREADS_ENV_VAR = "LOWRANK_BANDIT_THREADS"

LAMBDA_VARIANTS = ("experimental", "theoretical")
MLINGREEDY_RANK_MODES = ("true", "over", "under")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    d: int = 20
    T: int = 10
    N: int = 40
    K: int = 10
    r: int = 5
    sigma2: float = 1.0
    L: float = 1.0
    arm_kind: str = "gaussian_iid"
    policies: tuple[str, ...] = ("tracenorm", "itl", "oracle")
    lambda_variant: str = "experimental"
    lambda_scale: float = 1.0
    delta: float = 0.1
    mlingreedy_rank_mode: str = "true"
    repetitions: int = 5
    master_seed: int = 0
    fix_task_matrix: bool = False
    emit_diagnostics: bool = False

    def validate(self) -> list[str]:
        problems = []
        if not self.name:
            problems.append("name: must be non-empty")
        for fname in ("d", "T", "N", "K", "repetitions"):
            if int(getattr(self, fname)) < 1:
                problems.append(f"{fname}: must be a positive integer")
        if not (1 <= self.r <= min(self.d, self.T)):
            problems.append(f"r: must lie in [1, min(d, T)] = [1, {min(self.d, self.T)}]")
        if self.sigma2 < 0:
            problems.append("sigma2: must be non-negative")
        if self.L <= 0:
            problems.append("L: must be positive")
        if self.arm_kind not in ARM_KINDS:
            problems.append(f"arm_kind: unknown kind {self.arm_kind!r}")
        if not self.policies:
            problems.append("policies: at least one required")
        for p in self.policies:
            if p not in POLICY_KINDS:
                problems.append(f"policies: unknown policy {p!r}")
        if len(set(self.policies)) != len(self.policies):
            problems.append("policies: duplicates not allowed")
        if self.lambda_variant not in LAMBDA_VARIANTS:
            problems.append(f"lambda.variant: unknown variant {self.lambda_variant!r}")
        if self.lambda_scale <= 0:
            problems.append("lambda.l: must be positive")
        if not (0.0 < self.delta < 1.0):
            problems.append("lambda.delta: must lie in (0, 1)")
        if self.mlingreedy_rank_mode not in MLINGREEDY_RANK_MODES:
            problems.append(
                f"mlingreedy_rank_mode: unknown mode {self.mlingreedy_rank_mode!r}"
            )
        if self.master_seed < 0:
            problems.append("master_seed: must be a non-negative integer")
        return problems

    def lambda_rule(self, sigma_op_max: float) -> LambdaRule:
        return LambdaRule(
            variant=self.lambda_variant,
            scale=self.lambda_scale,
            delta=self.delta,
            sigma=math.sqrt(self.sigma2),
            sigma_op_max=sigma_op_max,
        )

    def arm_distribution(self) -> ArmDistribution:
        return ArmDistribution(self.arm_kind, dim=self.d, n_arms=self.K)

    def task_spec(self) -> TaskMatrixSpec:
        return TaskMatrixSpec(dim=self.d, n_tasks=self.T, rank=self.r,
                              column_norm_cap=self.L)


_CONFIG_FIELDS = {
    "name": str,
    "d": int,
    "T": int,
    "N": int,
    "K": int,
    "r": int,
    "sigma2": (int, float),
    "L": (int, float),
    "arm_kind": str,
    "policies": list,
    "lambda": dict,
    "mlingreedy_rank_mode": str,
    "repetitions": int,
    "master_seed": int,
    "fix_task_matrix": bool,
    "emit_diagnostics": bool,
}

_LAMBDA_FIELDS = {"variant": str, "l": (int, float), "delta": (int, float)}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a strict-schema JSON config; every violation is reported."""
    problems: list[str] = []
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"])
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])

    for key in raw:
        if key not in _CONFIG_FIELDS:
            problems.append(f"{key}: unknown key")
    kwargs = {}
    for key, expected in _CONFIG_FIELDS.items():
        if key not in raw:
            continue
        value = raw[key]
        if expected is int:
            # bool is an int subclass; reject it for integer fields
            if isinstance(value, bool) or not isinstance(value, int):
                problems.append(f"{key}: expected an integer")
                continue
        elif expected is bool:
            if not isinstance(value, bool):
                problems.append(f"{key}: expected a boolean")
                continue
        elif not isinstance(value, expected):
            problems.append(f"{key}: unexpected type {type(value).__name__}")
            continue
        if key == "lambda":
            for sub in value:
                if sub not in _LAMBDA_FIELDS:
                    problems.append(f"lambda.{sub}: unknown key")
            for sub, sub_t in _LAMBDA_FIELDS.items():
                if sub in value and not isinstance(value[sub], sub_t):
                    problems.append(f"lambda.{sub}: unexpected type")
            if "variant" in value:
                kwargs["lambda_variant"] = value["variant"]
            if "l" in value and isinstance(value["l"], (int, float)):
                kwargs["lambda_scale"] = float(value["l"])
            if "delta" in value and isinstance(value["delta"], (int, float)):
                kwargs["delta"] = float(value["delta"])
        elif key == "policies":
            if not all(isinstance(p, str) for p in value):
                problems.append("policies: entries must be strings")
            else:
                kwargs["policies"] = tuple(value)
        elif key in ("sigma2", "L"):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    # range-check whatever parsed cleanly so one failed parse reports everything
    config = ExperimentConfig(**kwargs)
    problems.extend(config.validate())
    if problems:
        raise ConfigError(problems)
    return config


def config_to_json(config: ExperimentConfig) -> str:
    doc = {
        "name": config.name,
        "d": config.d,
        "T": config.T,
        "N": config.N,
        "K": config.K,
        "r": config.r,
        "sigma2": config.sigma2,
        "L": config.L,
        "arm_kind": config.arm_kind,
        "policies": list(config.policies),
        "lambda": {
            "variant": config.lambda_variant,
            "l": config.lambda_scale,
            "delta": config.delta,
        },
        "mlingreedy_rank_mode": config.mlingreedy_rank_mode,
        "repetitions": config.repetitions,
        "master_seed": config.master_seed,
        "fix_task_matrix": config.fix_task_matrix,
        "emit_diagnostics": config.emit_diagnostics,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


@dataclass
class RepetitionFailure:
    repetition: int
    policy: str
    message: str


@dataclass
class RunResult:
    records: list[RoundRecord]
    diagnostics: DiagnosticsReport | None
    config_echo: ExperimentConfig
    artifact_version: str = ARTIFACT_VERSION
    failures: list[RepetitionFailure] = field(default_factory=list)
    arm_stream_checksums: dict[tuple[str, int], str] = field(default_factory=dict)


def _run_single_policy(policy_kind: str, replay: EnvironmentReplay,
                       config: ExperimentConfig, repetition: int):
    """Play one policy over one replay; returns (records, telemetry dict)."""
    d, big_t, big_n = config.d, config.T, config.N
    w = replay.task_matrix
    dist = replay.arm_dist

    kwargs = {}
    if policy_kind == "tracenorm":
        kwargs["lambda_rule"] = config.lambda_rule(dist.sigma_op_max)
    elif policy_kind == "oracle":
        kwargs["oracle_basis"] = OracleBasis.from_task_matrix(w)
    elif policy_kind == "mlingreedy":
        kwargs["mlingreedy_rank_param"] = mlingreedy_rank(
            config.mlingreedy_rank_mode, config.r, d, big_t
        )
    policy = init_policy(policy_kind, d, big_t, big_n, **kwargs)

    expected = np.zeros((big_n, big_t))
    realized = np.zeros((big_n, big_t))
    regrets = np.zeros((big_n, big_t))
    frob_errors = []
    lambdas = []
    converged_flags = []
    ranks = []

    for n in range(1, big_n + 1):
        sets = replay.decision_sets(n)
        if n == 1:
            picks = [int(i) for i in replay.round_one_choices]
        else:
            picks = policy.select_arms(sets, None)
        chosen = np.stack([sets[t].arms[picks[t]] for t in range(big_t)])
        # expected reward and regret from one score vector per task, so the
        # per-round pseudo-regret is exactly >= 0 (and exactly 0 at the optimum)
        scores = [sets[t].arms @ w[:, t] for t in range(big_t)]
        mu = np.array([scores[t][picks[t]] for t in range(big_t)])
        eta = replay.noise_at(n)
        rewards = mu + eta
        expected[n - 1] = mu
        realized[n - 1] = rewards
        regrets[n - 1] = [scores[t].max() - scores[t][picks[t]] for t in range(big_t)]
        policy.update(chosen, rewards)
        frob_errors.append(estimation_error(policy.estimate, w))
        lambdas.append(getattr(policy, "last_lambda", None))
        converged_flags.append(policy.last_converged)
        ranks.append(numerical_rank(policy.estimate))

    records = cumulative_metrics(
        expected,
        regrets,
        policy=policy_kind,
        repetition=repetition,
        realized_rewards=realized,
        frob_errors=frob_errors,
        lambdas=lambdas,
        converged_flags=converged_flags,
        rank_estimates=ranks,
    )
    telemetry = {
        "histories": policy.history_data(),
        "final_frob": frob_errors[-1],
        "frob_curve": frob_errors,
    }
    return records, telemetry


def _run_repetition(config: ExperimentConfig, repetition: int):
    """All policies against one shared replay. Returns records/telemetry/failures."""
    replay = EnvironmentReplay(
        task_spec=config.task_spec(),
        arm_dist=config.arm_distribution(),
        n_rounds=config.N,
        noise=NoiseSpec(math.sqrt(config.sigma2)),
        master_seed=config.master_seed,
        repetition=repetition,
        fix_task_matrix=config.fix_task_matrix,
    )
    checksum = replay.arm_stream_checksum()
    records: list[RoundRecord] = []
    failures: list[RepetitionFailure] = []
    telemetry: dict[str, dict] = {}
    checksums: dict[tuple[str, int], str] = {}
    for policy_kind in config.policies:
        try:
            recs, tele = _run_single_policy(policy_kind, replay, config, repetition)
        except Exception as exc:  # isolate: other policies/repetitions proceed
            failures.append(RepetitionFailure(repetition, policy_kind, str(exc)))
            continue
        records.extend(recs)
        telemetry[policy_kind] = tele
        checksums[(policy_kind, repetition)] = checksum
    diag_inputs = None
    if config.emit_diagnostics and "tracenorm" in telemetry:
        rule = config.lambda_rule(config.arm_distribution().sigma_op_max)
        diag_inputs = {
            "dn_event": dn_event_check(
                telemetry["tracenorm"]["histories"], replay.noise, rule,
                config.N, config.N,
            ),
            "frob_curve": telemetry["tracenorm"]["frob_curve"],
            "task_matrix": replay.task_matrix,
        }
    return records, failures, checksums, diag_inputs


def _jobs_from_env(jobs: int | None) -> int:
    env = os.environ.get(THREADS_ENV_VAR)
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError([f"{THREADS_ENV_VAR}: not an integer: {env!r}"])
    return max(1, jobs or 1)


def run_experiment(config: ExperimentConfig, jobs: int | None = None) -> RunResult:
    problems = config.validate()
    if problems:
        raise ConfigError(problems)
    jobs = _jobs_from_env(jobs)
    reps = range(config.repetitions)
    if jobs == 1 or config.repetitions == 1:
        outputs = [_run_repetition(config, rep) for rep in reps]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_repetition, [config] * config.repetitions, reps))

    records: list[RoundRecord] = []
    failures: list[RepetitionFailure] = []
    checksums: dict[tuple[str, int], str] = {}
    diag_inputs = []
    for recs, fails, sums, diag in outputs:
        records.extend(recs)
        failures.extend(fails)
        checksums.update(sums)
        if diag is not None:
            diag_inputs.append(diag)
    records.sort(key=lambda r: (r.policy, r.repetition, r.round))

    diagnostics = None
    if config.emit_diagnostics:
        diagnostics = _build_diagnostics(config, diag_inputs)
    return RunResult(
        records=records,
        diagnostics=diagnostics,
        config_echo=config,
        failures=failures,
        arm_stream_checksums=checksums,
    )


def _build_diagnostics(config: ExperimentConfig, diag_inputs: list[dict]) -> DiagnosticsReport:
    report = DiagnosticsReport()
    dist = config.arm_distribution()
    report.n0_report = n0_report(
        config.d, config.T, config.r, config.delta, dist.sigma_op_max, c_scale=1.0
    )
    if diag_inputs:
        report.dn_event_frequency = float(
            np.mean([1.0 if d["dn_event"] else 0.0 for d in diag_inputs])
        )
        curves = np.array([d["frob_curve"] for d in diag_inputs])
        mean_curve = curves.mean(axis=0)
        lo = max(2, config.N // 4)
        rounds = np.arange(lo, config.N + 1)
        vals = mean_curve[lo - 1 :]
        if np.all(vals > 0) and rounds.size >= 2:
            slope = np.polyfit(np.log(rounds), np.log(vals), 1)[0]
            report.error_scaling_slope = float(slope)
        shared_cov = sum(dist.covariances) / len(dist.covariances)
        report.rsc_probe_value = rsc_probe(
            shared_cov,
            svd(diag_inputs[0]["task_matrix"]),
            samples=2000,
            rng=default_rng(SeedSequence(config.master_seed, spawn_key=(2**32,))),
        )
    return report


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_results(result: RunResult, out_dir) -> dict[str, Path]:
    """Persist results.csv, realized_rewards.csv, diagnostics.json, config echo."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}")
    paths: dict[str, Path] = {}

    results = out / "results.csv"
    lines = [RESULTS_HEADER]
    for r in result.records:
        lines.append(
            ",".join(
                [
                    r.policy,
                    str(r.repetition),
                    str(r.round),
                    _fmt(float(r.avg_cum_reward)),
                    _fmt(float(r.avg_cum_regret)),
                    _fmt(r.frob_error),
                    _fmt(r.lambda_n),
                    _fmt(bool(r.solver_converged)),
                    _fmt(r.rank_estimate),
                ]
            )
        )
    _write_text(results, "\n".join(lines) + "\n")
    paths["results"] = results

    realized = out / "realized_rewards.csv"
    lines = ["policy,repetition,round,avg_cum_reward_realized"]
    for r in result.records:
        lines.append(
            ",".join(
                [r.policy, str(r.repetition), str(r.round),
                 _fmt(r.avg_cum_reward_realized)]
            )
        )
    _write_text(realized, "\n".join(lines) + "\n")
    paths["realized"] = realized

    diag_doc = {
        "artifact_version": result.artifact_version,
        "failures": [asdict(f) for f in result.failures],
        "diagnostics": None if result.diagnostics is None else asdict(result.diagnostics),
    }
    diag_path = out / "diagnostics.json"
    _write_text(diag_path, json.dumps(diag_doc, indent=2, sort_keys=True) + "\n")
    paths["diagnostics"] = diag_path

    if result.failures:
        fail_path = out / "failures.csv"
        lines = ["repetition,policy,message"]
        for f in result.failures:
            msg = f.message.replace("\n", " ").replace(",", ";")
            lines.append(f"{f.repetition},{f.policy},{msg}")
        _write_text(fail_path, "\n".join(lines) + "\n")
        paths["failures"] = fail_path

    echo = out / "config_echo.json"
    _write_text(echo, config_to_json(result.config_echo) + "\n")
    paths["config_echo"] = echo
    return paths


def _write_text(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}")


@dataclass
class AggregateRow:
    policy: str
    round: int
    mean_reward: float
    stderr_reward: float
    mean_regret: float
    stderr_regret: float


@dataclass
class AggregateResult:
    rows: list[AggregateRow]
    partial: bool  # true when some (policy, round) has fewer repetitions than others


def aggregate(records: list[RoundRecord]) -> AggregateResult:
    """Per-policy mean and standard-error curves over repetitions."""
    groups: dict[tuple[str, int], list[RoundRecord]] = {}
    for r in records:
        groups.setdefault((r.policy, r.round), []).append(r)
    counts = {len(v) for v in groups.values()}
    partial = len(counts) > 1
    rows = []
    for (policy, rnd), recs in sorted(groups.items()):
        recs = sorted(recs, key=lambda r: r.repetition)
        rewards = np.array([r.avg_cum_reward for r in recs])
        regrets = np.array([r.avg_cum_regret for r in recs])
        k = rewards.size
        stderr_reward = float(rewards.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
        stderr_regret = float(regrets.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
        rows.append(
            AggregateRow(
                policy=policy,
                round=rnd,
                mean_reward=float(rewards.mean()),
                stderr_reward=stderr_reward,
                mean_regret=float(regrets.mean()),
                stderr_regret=stderr_regret,
            )
        )
    return AggregateResult(rows=rows, partial=partial)


def write_aggregate(agg: AggregateResult, path) -> Path:
    path = Path(path)
    lines = ["policy,round,mean_reward,stderr_reward,mean_regret,stderr_regret"]
    for row in agg.rows:
        lines.append(
            ",".join(
                [row.policy, str(row.round), _fmt(row.mean_reward),
                 _fmt(row.stderr_reward), _fmt(row.mean_regret), _fmt(row.stderr_regret)]
            )
        )
    _write_text(path, "\n".join(lines) + "\n")
    return path
