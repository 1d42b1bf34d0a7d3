"""Monte Carlo MSE studies, the relative-RMSE metric with its simulation-based
standard error, dataset file I/O, and the noisy-nuisance scenario builder.

Replications draw independent random streams from a splittable seed sequence,
so results do not depend on execution order and the study can run across
processes (capped by the OPE_DML_THREADS environment variable).
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimators import (
    Estimator,
    ScoreOptions,
    ValueEstimate,
    dm_estimate,
    dml_estimate,
    dr_full_estimate,
    dr_half_estimate,
    ipw_estimate,
)
from .mdp import (
    LoggedDataset,
    Policy,
    TabularMdp,
    Trajectory,
    ValidationError,
    exact_policy_value,
    mdp_from_dict,
    sample_dataset,
)
from .nuisance import NuisanceConfig, fit_nuisance

_ESTIMATOR_NAMES = tuple(e.value for e in Estimator)


# ---------------------------------------------------------------------------
# Policy / dataset serialization


def policy_to_dict(policy: Policy) -> dict:
    return {"table": policy.table.tolist()}


def policy_from_dict(obj: dict) -> Policy:
    if not isinstance(obj, dict) or "table" not in obj:
        raise ValidationError("policy spec must be an object with a 'table' field")
    return Policy(table=np.asarray(obj["table"], dtype=float))


def load_policy(path: str | Path) -> Policy:
    with open(path) as fh:
        return policy_from_dict(json.load(fh))


def write_jsonl(data: LoggedDataset, path: str | Path) -> None:
    """Emit one {"steps": [{"s", "a", "r", "p"}, ...]} object per trajectory."""
    with open(path, "w") as fh:
        for i in range(data.n):
            traj = data.trajectory(i)
            steps = [
                {"s": s, "a": a, "r": r, "p": p}
                for s, a, r, p in traj.steps
            ]
            fh.write(json.dumps({"steps": steps}) + "\n")


def _build_label_map(raw_labels: set, provided: dict | None, kind: str) -> dict:
    if provided is not None:
        missing = raw_labels - set(provided)
        if missing:
            raise ValidationError(f"{kind} label map is missing {sorted(missing, key=str)}")
        return provided
    if all(isinstance(x, int) for x in raw_labels):
        if any(x < 0 for x in raw_labels):
            raise ValidationError(f"negative integer {kind} label")
        return {x: x for x in raw_labels}
    # String labels map to dense ids in sorted order for determinism.
    return {label: i for i, label in enumerate(sorted(str(x) for x in raw_labels))}


def ingest_jsonl(
    path: str | Path,
    state_map: dict | None = None,
    action_map: dict | None = None,
) -> LoggedDataset:
    """Read a trajectory-per-line JSONL file into a LoggedDataset.

    String state/action labels are mapped through the provided maps, or through
    maps inferred in sorted label order. Horizons must be uniform; propensities
    are kept only if every step of every trajectory carries one.
    """
    rows = []
    state_labels, action_labels = set(), set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: invalid JSON ({exc})") from exc
            steps = obj.get("steps")
            if not isinstance(steps, list) or not steps:
                raise ValidationError(f"line {lineno}: expected a nonempty 'steps' array")
            parsed = []
            for j, step in enumerate(steps):
                try:
                    s, a, r = step["s"], step["a"], step["r"]
                except (KeyError, TypeError):
                    raise ValidationError(f"line {lineno}: step {j} needs 's', 'a', 'r'")
                p = step.get("p")
                if p is not None and not 0.0 < p <= 1.0:
                    raise ValidationError(f"line {lineno}: propensity {p} outside (0, 1]")
                state_labels.add(s)
                action_labels.add(a)
                parsed.append((s, a, float(r), p))
            rows.append((lineno, parsed))
    if not rows:
        raise ValidationError("empty dataset")
    horizon = len(rows[0][1]) - 1
    for lineno, parsed in rows:
        if len(parsed) - 1 != horizon:
            raise ValidationError(
                f"line {lineno}: horizon {len(parsed) - 1} differs from {horizon}"
            )
    smap = _build_label_map(state_labels, state_map, "state")
    amap = _build_label_map(action_labels, action_map, "action")
    known = all(p is not None for _, parsed in rows for (_, _, _, p) in parsed)
    trajectories = [
        Trajectory(
            states=[smap[s] for s, _, _, _ in parsed],
            actions=[amap[a] for _, a, _, _ in parsed],
            rewards=[r for _, _, r, _ in parsed],
            propensities=[p for _, _, _, p in parsed] if known else None,
        )
        for _, parsed in rows
    ]
    return LoggedDataset.from_trajectories(trajectories)


# ---------------------------------------------------------------------------
# Noisy-nuisance scenario: product with a reward-independent noise chain


def noise_chain(num_noise_states: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """A fixed random Markov chain (initial dist, transition matrix) over noise ids."""
    rng = np.random.default_rng(seed)
    init = np.full(num_noise_states, 1.0 / num_noise_states)
    trans = rng.dirichlet(np.ones(num_noise_states), size=num_noise_states)
    return init, trans


def with_noise_states(mdp: TabularMdp, num_noise_states: int, seed: int = 0) -> TabularMdp:
    """Product MDP whose extra state dimension evolves independently of rewards.

    Product state ids are s * num_noise_states + z. Rewards and the reward-
    relevant dynamics depend only on s, so the value of any lifted policy is
    unchanged while every nuisance table has num_noise_states times as many
    rows to estimate.
    """
    if num_noise_states < 1:
        raise ValidationError("need at least one noise state")
    z_init, z_trans = noise_chain(num_noise_states, seed)
    big_s = mdp.num_states * num_noise_states
    initial = np.kron(mdp.initial_dist, z_init)
    transitions = np.empty((big_s, mdp.num_actions, big_s))
    for a in range(mdp.num_actions):
        transitions[:, a, :] = np.kron(mdp.transitions[:, a, :], z_trans)
    rewards = [
        [mdp.rewards[s][a] for a in range(mdp.num_actions)]
        for s in range(mdp.num_states)
        for _ in range(num_noise_states)
    ]
    return TabularMdp(
        num_states=big_s,
        num_actions=mdp.num_actions,
        horizon=mdp.horizon,
        discount=mdp.discount,
        initial_dist=initial,
        transitions=transitions,
        rewards=rewards,
    )


def lift_policy(policy: Policy, num_noise_states: int) -> Policy:
    """Lift a base-state policy to the noise-product state space (ignores z)."""
    return Policy(table=np.repeat(policy.table, num_noise_states, axis=0))


# ---------------------------------------------------------------------------
# Single-dataset evaluation


def evaluate_dataset(
    data: LoggedDataset,
    eval_policy: Policy,
    discount: float,
    estimators: tuple[str, ...],
    rng: np.random.Generator,
    known_behavior: Policy | None = None,
    k_folds: int = 2,
    config: NuisanceConfig = NuisanceConfig(),
    level: float = 0.95,
    options: ScoreOptions = ScoreOptions(),
) -> dict[str, ValueEstimate]:
    """Run the named estimators on one logged dataset.

    When no known behavior policy is supplied, IPW uses the full-data empirical
    behavior estimate; DM uses the full-data nuisance fit.
    """
    for name in estimators:
        if name not in _ESTIMATOR_NAMES:
            raise ValidationError(f"unknown estimator '{name}'")
    results: dict[str, ValueEstimate] = {}
    full_fit = None

    def full_nuisance():
        nonlocal full_fit
        if full_fit is None:
            full_fit = fit_nuisance(
                data, eval_policy, discount,
                known_behavior=known_behavior, config=config, rng=rng,
            )
        return full_fit

    for name in estimators:
        if name == Estimator.DM.value:
            results[name] = dm_estimate(data, full_nuisance(), eval_policy, level=level)
        elif name == Estimator.IPW.value:
            behavior = known_behavior or full_nuisance().behavior
            results[name] = ipw_estimate(
                data, behavior, eval_policy, discount, level=level, options=options
            )
        elif name == Estimator.DR_FULL.value:
            results[name] = dr_full_estimate(
                data, eval_policy, discount, known_behavior=known_behavior,
                config=config, level=level, options=options, rng=rng,
            )
        elif name == Estimator.DR_HALF.value:
            results[name] = dr_half_estimate(
                data, eval_policy, discount, rng, known_behavior=known_behavior,
                config=config, level=level, options=options,
            )
        elif name == Estimator.DML.value:
            results[name] = dml_estimate(
                data, eval_policy, discount, rng, k_folds=k_folds,
                known_behavior=known_behavior, config=config, level=level, options=options,
            )
    return results


# ---------------------------------------------------------------------------
# MSE experiment


@dataclass(frozen=True)
class ExperimentConfig:
    mdp: TabularMdp
    behavior_policy: Policy
    evaluation_policy: Policy
    n_trajectories: int
    replications: int
    estimators: tuple = (Estimator.DML.value,)
    k_folds: int = 2
    seed: int = 0
    discount: float | None = None  # defaults to the MDP's discount
    level: float = 0.95
    behavior_known: bool = False
    nuisance: NuisanceConfig = field(default_factory=NuisanceConfig)
    noise_states: int = 0
    noise_seed: int = 0
    ground_truth_method: str = "dp_exact"  # or "on_policy_rollout"
    ground_truth_n: int = 100_000
    ground_truth_seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if self.n_trajectories < self.k_folds:
            raise ValidationError("n_trajectories must be >= k_folds")
        for name in self.estimators:
            if name not in _ESTIMATOR_NAMES:
                raise ValidationError(f"unknown estimator '{name}'")
        if self.ground_truth_method not in ("dp_exact", "on_policy_rollout"):
            raise ValidationError("ground_truth method must be dp_exact or on_policy_rollout")

    @property
    def effective_discount(self) -> float:
        return self.mdp.discount if self.discount is None else self.discount


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")


def _load_component(obj, loader, inline_loader, what: str):
    if isinstance(obj, str):
        return loader(obj)
    if isinstance(obj, dict):
        return inline_loader(obj)
    raise ValidationError(f"{what} must be a path or an inline object")


def experiment_config_from_dict(obj: dict, base_dir: Path | None = None) -> ExperimentConfig:
    _reject_unknown(
        obj,
        {"mdp", "behavior_policy", "evaluation_policy", "n_trajectories", "replications",
         "estimators", "k_folds", "seed", "discount", "level", "nuisance",
         "noise_states", "ground_truth"},
        "experiment config",
    )
    base = base_dir or Path(".")

    def resolve(p):
        return str(base / p)

    from .mdp import load_mdp  # local import to keep module load order simple

    mdp = _load_component(obj["mdp"], lambda p: load_mdp(resolve(p)), mdp_from_dict, "mdp")
    behavior = _load_component(
        obj["behavior_policy"], lambda p: load_policy(resolve(p)), policy_from_dict,
        "behavior_policy",
    )
    evaluation = _load_component(
        obj["evaluation_policy"], lambda p: load_policy(resolve(p)), policy_from_dict,
        "evaluation_policy",
    )
    nuisance_obj = obj.get("nuisance", {})
    _reject_unknown(
        nuisance_obj, {"k_folds", "smoothing_alpha", "behavior_policy", "fit_subsample", "seed"},
        "nuisance config",
    )
    behavior_mode = nuisance_obj.get("behavior_policy", "estimated")
    if behavior_mode not in ("known", "estimated"):
        raise ValidationError("nuisance.behavior_policy must be 'known' or 'estimated'")
    gt = obj.get("ground_truth", {"method": "dp_exact"})
    _reject_unknown(gt, {"method", "n", "seed"}, "ground_truth")
    noise = obj.get("noise_states", {})
    _reject_unknown(noise, {"count", "seed"}, "noise_states")
    return ExperimentConfig(
        mdp=mdp,
        behavior_policy=behavior,
        evaluation_policy=evaluation,
        n_trajectories=int(obj["n_trajectories"]),
        replications=int(obj["replications"]),
        estimators=tuple(obj.get("estimators", [Estimator.DML.value])),
        k_folds=int(nuisance_obj.get("k_folds", obj.get("k_folds", 2))),
        seed=int(nuisance_obj.get("seed", obj.get("seed", 0))),
        discount=None if obj.get("discount") is None else float(obj["discount"]),
        level=float(obj.get("level", 0.95)),
        behavior_known=(behavior_mode == "known"),
        nuisance=NuisanceConfig(
            smoothing_alpha=float(nuisance_obj.get("smoothing_alpha", 0.5)),
            fit_subsample=float(nuisance_obj.get("fit_subsample", 1.0)),
        ),
        noise_states=int(noise.get("count", 0)),
        noise_seed=int(noise.get("seed", 0)),
        ground_truth_method=gt.get("method", "dp_exact"),
        ground_truth_n=int(gt.get("n", 100_000)),
        ground_truth_seed=int(gt.get("seed", 0)),
    )


@dataclass(frozen=True)
class EstimatorMse:
    estimator: str
    mse: float
    se_of_mse: float | None
    bias: float
    variance: float
    replications: int

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "mse": self.mse,
            "se_of_mse": self.se_of_mse,
            "bias": self.bias,
            "variance": self.variance,
            "replications": self.replications,
        }


@dataclass(frozen=True)
class MseReport:
    ground_truth: float
    ground_truth_method: str
    replications: int
    n_trajectories: int
    results: dict

    def to_dict(self) -> dict:
        return {
            "ground_truth": self.ground_truth,
            "ground_truth_method": self.ground_truth_method,
            "replications": self.replications,
            "n_trajectories": self.n_trajectories,
            "results": {name: r.to_dict() for name, r in sorted(self.results.items())},
        }


def _scenario(config: ExperimentConfig) -> tuple[TabularMdp, Policy, Policy]:
    mdp, behavior, evaluation = config.mdp, config.behavior_policy, config.evaluation_policy
    if config.noise_states > 0:
        mdp = with_noise_states(mdp, config.noise_states, config.noise_seed)
        behavior = lift_policy(behavior, config.noise_states)
        evaluation = lift_policy(evaluation, config.noise_states)
    return mdp, behavior, evaluation


def _run_replication(args) -> dict[str, float]:
    config, seed_seq = args
    mdp, behavior, evaluation = _scenario(config)
    child = seed_seq.spawn(len(config.estimators) + 1)
    data = sample_dataset(mdp, behavior, config.n_trajectories, np.random.default_rng(child[0]))
    out: dict[str, float] = {}
    for j, name in enumerate(config.estimators):
        results = evaluate_dataset(
            data,
            evaluation,
            config.effective_discount,
            (name,),
            np.random.default_rng(child[j + 1]),
            known_behavior=behavior if config.behavior_known else None,
            k_folds=config.k_folds,
            config=config.nuisance,
            level=config.level,
        )
        out[name] = results[name].value
    return out


def ground_truth_value(config: ExperimentConfig) -> float:
    mdp, _, evaluation = _scenario(config)
    if config.ground_truth_method == "dp_exact":
        return exact_policy_value(mdp, evaluation)
    rng = np.random.default_rng(config.ground_truth_seed)
    rollout = sample_dataset(mdp, evaluation, config.ground_truth_n, rng)
    disc = config.effective_discount ** np.arange(mdp.horizon + 1)
    return float((rollout.rewards * disc).sum(axis=1).mean())


def run_mse_experiment(config: ExperimentConfig) -> MseReport:
    """Ground truth, then per-replication fresh datasets and estimator runs."""
    truth = ground_truth_value(config)
    reps = config.replications
    children = np.random.SeedSequence(config.seed).spawn(reps)
    tasks = [(config, child) for child in children]
    workers = int(os.environ.get("OPE_DML_THREADS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_replication, tasks, chunksize=max(1, reps // (4 * workers))))
    else:
        rows = [_run_replication(task) for task in tasks]
    results = {}
    for name in config.estimators:
        estimates = np.array([row[name] for row in rows])
        errors_sq = (estimates - truth) ** 2
        mse = float(errors_sq.mean())
        se = float(errors_sq.std(ddof=1) / np.sqrt(reps)) if reps > 1 else None
        results[name] = EstimatorMse(
            estimator=name,
            mse=mse,
            se_of_mse=se,
            bias=float(estimates.mean() - truth),
            variance=float(estimates.var()),
            replications=reps,
        )
    return MseReport(
        ground_truth=truth,
        ground_truth_method=config.ground_truth_method,
        replications=reps,
        n_trajectories=config.n_trajectories,
        results=results,
    )


# ---------------------------------------------------------------------------
# Relative-RMSE metric


@dataclass(frozen=True)
class CampaignBatchCell:
    """One campaign-batch comparison of an off-policy estimate to its ground truth."""

    campaign: str
    batch: str
    estimate: float
    actual: float
    n_impressions: float
    ope_variance: float | None = None
    n_ope: float | None = None
    online_variance: float | None = None

    def __post_init__(self):
        if self.n_impressions <= 0:
            raise ValidationError("n_impressions must be positive")
        if self.actual == 0:
            raise ValidationError("actual value must be nonzero for relative normalization")


def cell_from_dict(obj: dict) -> CampaignBatchCell:
    _reject_unknown(
        obj,
        {"campaign", "batch", "estimate", "actual", "n_impressions",
         "ope_variance", "n_ope", "online_variance"},
        "cell",
    )
    try:
        return CampaignBatchCell(
            campaign=str(obj["campaign"]),
            batch=str(obj["batch"]),
            estimate=float(obj["estimate"]),
            actual=float(obj["actual"]),
            n_impressions=float(obj["n_impressions"]),
            ope_variance=None if obj.get("ope_variance") is None else float(obj["ope_variance"]),
            n_ope=None if obj.get("n_ope") is None else float(obj["n_ope"]),
            online_variance=(
                None if obj.get("online_variance") is None else float(obj["online_variance"])
            ),
        )
    except KeyError as exc:
        raise ValidationError(f"cell missing field {exc}") from exc


def relative_rmse(cells: list[CampaignBatchCell]) -> float:
    """Impression-weighted RMS of the relative prediction errors."""
    if not cells:
        raise ValidationError("need at least one cell")
    weights = np.array([c.n_impressions for c in cells])
    rel = np.array([(c.estimate - c.actual) / c.actual for c in cells])
    return float(np.sqrt((weights * rel**2).sum() / weights.sum()))


def relative_rmse_se(
    cells: list[CampaignBatchCell],
    rng: np.random.Generator,
    sims: int = 100_000,
) -> float:
    """Simulation standard error of relative-RMSE under normal approximations.

    Both simulated draws per cell are centered at the off-policy estimate: the
    estimate draw uses its estimated asymptotic variance, the actual draw uses
    the online variance (defaulting to the binary-reward value actual*(1-actual)).
    """
    if sims < 1:
        raise ValidationError("sims must be >= 1")
    for c in cells:
        if c.ope_variance is None or c.n_ope is None:
            raise ValidationError("every cell needs ope_variance and n_ope")
    est = np.array([c.estimate for c in cells])
    weights = np.array([c.n_impressions for c in cells])
    sd_ope = np.sqrt([c.ope_variance / c.n_ope for c in cells])
    online_var = np.array([
        c.actual * (1.0 - c.actual) if c.online_variance is None else c.online_variance
        for c in cells
    ])
    if np.any(online_var < 0):
        raise ValidationError("online variance must be nonnegative")
    sd_online = np.sqrt(online_var / weights)
    est_sim = est + rng.standard_normal((sims, len(cells))) * sd_ope
    actual_sim = est + rng.standard_normal((sims, len(cells))) * sd_online
    rel = (est_sim - actual_sim) / actual_sim
    rr = np.sqrt((weights * rel**2).sum(axis=1) / weights.sum())
    return float(rr.std())
