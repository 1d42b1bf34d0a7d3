"""Nuisance estimation: fold partitioning, empirical behavior/reward/transition
models, and the backward Q recursion.

All nuisance models are tabular and time-invariant: counts are pooled across
steps. Unobserved cells fall back to the global mean reward, uniform
transitions, and uniform behavior rows so the Q recursion is defined
everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import LoggedDataset, Policy, ValidationError


class SupportViolationError(ValueError):
    """The evaluation policy puts mass on an action the behavior model rules out."""


@dataclass(frozen=True)
class NuisanceConfig:
    """Knobs for the tabular nuisance fit.

    smoothing_alpha: additive smoothing for the behavior-policy counts.
        alpha > 0 keeps every fitted propensity strictly positive.
    fit_subsample: fraction of the fitting subset actually used. Values < 1
        deliberately degrade the nuisances (noisy-nuisance experiments).
    """

    smoothing_alpha: float = 0.5
    fit_subsample: float = 1.0

    def __post_init__(self):
        if self.smoothing_alpha < 0:
            raise ValidationError("smoothing_alpha must be >= 0")
        if not 0.0 < self.fit_subsample <= 1.0:
            raise ValidationError("fit_subsample must lie in (0, 1]")


@dataclass(frozen=True)
class FoldPartition:
    """Disjoint trajectory-index folds covering {0..N-1}, sizes differing by <= 1."""

    folds: tuple

    def __post_init__(self):
        object.__setattr__(self, "folds", tuple(np.asarray(f, dtype=np.int64) for f in self.folds))

    @property
    def k(self) -> int:
        return len(self.folds)

    @property
    def n(self) -> int:
        return sum(f.size for f in self.folds)

    def complement(self, fold_index: int) -> np.ndarray:
        return np.concatenate([f for j, f in enumerate(self.folds) if j != fold_index])


@dataclass(frozen=True, eq=False)
class QTable:
    """Per-step state-action value tables, shape (T+1, S, A)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.ndim != 3:
            raise ValidationError("q table must have shape (T+1, S, A)")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("q table entries must be finite")


@dataclass(frozen=True, eq=False)
class NuisanceEstimate:
    """A candidate tuple: behavior policy, per-step Q tables, and the
    mean-reward/transition tables the Q tables were built from."""

    behavior: Policy
    q: QTable
    mean_reward: np.ndarray
    transitions: np.ndarray


def make_folds(n_trajectories: int, k: int, rng: np.random.Generator) -> FoldPartition:
    """Uniformly random K-fold partition of {0..N-1}; earlier folds get the extras."""
    if k < 2:
        raise ValidationError("need at least 2 folds")
    if k > n_trajectories:
        raise ValidationError("more folds than trajectories")
    perm = rng.permutation(n_trajectories)
    return FoldPartition(folds=tuple(np.sort(f) for f in np.array_split(perm, k)))


def estimate_behavior_policy(
    data: LoggedDataset, num_states: int, num_actions: int, smoothing: float = 0.5
) -> Policy:
    """Additively smoothed empirical action shares per state, pooled over steps."""
    counts = np.zeros((num_states, num_actions))
    np.add.at(counts, (data.states.ravel(), data.actions.ravel()), 1.0)
    counts += smoothing
    totals = counts.sum(axis=1, keepdims=True)
    table = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / num_actions)
    return Policy(table=table)


def estimate_mean_reward(data: LoggedDataset, num_states: int, num_actions: int) -> np.ndarray:
    """Sample-mean rewards per (s, a); unobserved cells get the global mean."""
    sums = np.zeros((num_states, num_actions))
    counts = np.zeros((num_states, num_actions))
    idx = (data.states.ravel(), data.actions.ravel())
    np.add.at(sums, idx, data.rewards.ravel())
    np.add.at(counts, idx, 1.0)
    global_mean = float(data.rewards.mean())
    return np.where(counts > 0, sums / np.where(counts > 0, counts, 1.0), global_mean)


def estimate_transitions(data: LoggedDataset, num_states: int, num_actions: int) -> np.ndarray:
    """Empirical next-state frequencies per (s, a); unobserved cells get uniform rows."""
    counts = np.zeros((num_states, num_actions, num_states))
    if data.horizon > 0:
        idx = (
            data.states[:, :-1].ravel(),
            data.actions[:, :-1].ravel(),
            data.states[:, 1:].ravel(),
        )
        np.add.at(counts, idx, 1.0)
    totals = counts.sum(axis=2, keepdims=True)
    return np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / num_states)


def q_recursion(
    mean_reward: np.ndarray,
    transitions: np.ndarray,
    eval_policy: Policy,
    horizon: int,
    discount: float,
) -> QTable:
    """Backward recursion: q_T = mu and
    q_t = mu + discount * sum_{s',a'} P(s'|s,a) pi_e(a'|s') q_{t+1}(s',a')."""
    mean_reward = np.asarray(mean_reward, dtype=float)
    transitions = np.asarray(transitions, dtype=float)
    num_states, num_actions = mean_reward.shape
    if transitions.shape != (num_states, num_actions, num_states):
        raise ValidationError("transitions shape does not match mean_reward")
    if eval_policy.table.shape != (num_states, num_actions):
        raise ValidationError("eval policy shape does not match mean_reward")
    values = np.empty((horizon + 1, num_states, num_actions))
    for t in range(horizon, -1, -1):
        values[t] = mean_reward
        if t < horizon:
            v_next = (eval_policy.table * values[t + 1]).sum(axis=1)
            values[t] += discount * (transitions @ v_next)
    return QTable(values=values)


def check_support(behavior: Policy, eval_policy: Policy) -> None:
    """Raise before any score evaluation if pi_e has mass where behavior has none."""
    bad = (eval_policy.table > 0) & (behavior.table == 0)
    if np.any(bad):
        s, a = np.argwhere(bad)[0]
        raise SupportViolationError(
            f"behavior policy assigns zero probability to action {a} in state {s} "
            "while the evaluation policy does not"
        )


def fit_nuisance(
    data: LoggedDataset,
    eval_policy: Policy,
    discount: float,
    known_behavior: Policy | None = None,
    config: NuisanceConfig = NuisanceConfig(),
    rng: np.random.Generator | None = None,
) -> NuisanceEstimate:
    """Fit one nuisance tuple on ``data`` (the trivial one-fold path)."""
    num_states, num_actions = eval_policy.table.shape
    if config.fit_subsample < 1.0:
        if rng is None:
            raise ValidationError("fit_subsample < 1 requires an rng")
        m = max(1, round(config.fit_subsample * data.n))
        data = data.subset(np.sort(rng.choice(data.n, size=m, replace=False)))
    if known_behavior is not None:
        behavior = known_behavior
    else:
        behavior = estimate_behavior_policy(data, num_states, num_actions, config.smoothing_alpha)
    check_support(behavior, eval_policy)
    mu = estimate_mean_reward(data, num_states, num_actions)
    trans = estimate_transitions(data, num_states, num_actions)
    q = q_recursion(mu, trans, eval_policy, data.horizon, discount)
    return NuisanceEstimate(behavior=behavior, q=q, mean_reward=mu, transitions=trans)


def fit_nuisances(
    data: LoggedDataset,
    partition: FoldPartition,
    eval_policy: Policy,
    discount: float,
    known_behavior: Policy | None = None,
    config: NuisanceConfig = NuisanceConfig(),
    rng: np.random.Generator | None = None,
) -> list[NuisanceEstimate]:
    """One nuisance tuple per fold, each fitted only on that fold's complement."""
    if partition.n != data.n:
        raise ValidationError("partition does not cover the dataset")
    return [
        fit_nuisance(
            data.subset(partition.complement(k)),
            eval_policy,
            discount,
            known_behavior=known_behavior,
            config=config,
            rng=rng,
        )
        for k in range(partition.k)
    ]
