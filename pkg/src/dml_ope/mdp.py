"""Finite tabular MDPs, trajectory sampling, and exact enumeration oracles.

All probability tables are dense numpy arrays indexed by 0-based state and
action ids. Everything here is exactly computable: rewards have finite
support, so mean/variance tables and full trajectory enumeration are exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROB_TOL = 1e-12
DEFAULT_ENUMERATION_CAP = 10_000_000


class ValidationError(ValueError):
    """Malformed MDP, policy, or dataset input."""


class EnumerationCapError(RuntimeError):
    """Exact enumeration would exceed the configured outcome cap."""


def _check_prob_vector(vec: np.ndarray, name: str) -> None:
    if np.any(vec < 0):
        raise ValidationError(f"{name} has negative entries")
    if abs(float(vec.sum()) - 1.0) > PROB_TOL:
        raise ValidationError(f"{name} sums to {float(vec.sum())!r}, expected 1")


@dataclass(frozen=True, eq=False)
class RewardSpec:
    """Finite-support reward distribution for one (state, action) pair."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "support", np.asarray(self.support, dtype=float))
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        if self.support.ndim != 1 or self.support.shape != self.probs.shape:
            raise ValidationError("reward support and probs must be 1-d and equal length")
        if not np.all(np.isfinite(self.support)):
            raise ValidationError("reward support must be finite")
        _check_prob_vector(self.probs, "reward probs")

    @property
    def mean(self) -> float:
        return float(self.support @ self.probs)

    @property
    def variance(self) -> float:
        return float(((self.support - self.mean) ** 2) @ self.probs)


@dataclass(frozen=True, eq=False)
class Policy:
    """State-indexed action distribution table, shape (num_states, num_actions)."""

    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", np.asarray(self.table, dtype=float))
        if self.table.ndim != 2 or self.table.shape[1] < 1:
            raise ValidationError("policy table must be 2-d with at least one action")
        for s in range(self.table.shape[0]):
            _check_prob_vector(self.table[s], f"policy row {s}")

    @property
    def num_states(self) -> int:
        return self.table.shape[0]

    @property
    def num_actions(self) -> int:
        return self.table.shape[1]

    def prob(self, state: int, action: int) -> float:
        return float(self.table[state, action])


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite state/action MDP with finite-support rewards and a fixed horizon.

    ``horizon`` is the last step index; trajectories have ``horizon + 1`` steps.
    ``discount`` has no default: it must be chosen explicitly.
    """

    num_states: int
    num_actions: int
    horizon: int
    discount: float
    initial_dist: np.ndarray
    transitions: np.ndarray  # (S, A, S)
    rewards: tuple  # rewards[s][a] -> RewardSpec

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1:
            raise ValidationError("num_states and num_actions must be positive")
        if self.horizon < 0:
            raise ValidationError("horizon must be >= 0")
        if not 0.0 <= self.discount <= 1.0:
            raise ValidationError("discount must lie in [0, 1]")
        object.__setattr__(self, "initial_dist", np.asarray(self.initial_dist, dtype=float))
        object.__setattr__(self, "transitions", np.asarray(self.transitions, dtype=float))
        if self.initial_dist.shape != (self.num_states,):
            raise ValidationError("initial_dist has wrong shape")
        _check_prob_vector(self.initial_dist, "initial_dist")
        if self.transitions.shape != (self.num_states, self.num_actions, self.num_states):
            raise ValidationError("transitions has wrong shape")
        for s in range(self.num_states):
            for a in range(self.num_actions):
                _check_prob_vector(self.transitions[s, a], f"transitions[{s}][{a}]")
        rewards = tuple(tuple(row) for row in self.rewards)
        if len(rewards) != self.num_states or any(len(row) != self.num_actions for row in rewards):
            raise ValidationError("rewards must be defined for every (state, action) pair")
        object.__setattr__(self, "rewards", rewards)
        # Padded reward arrays for vectorized sampling/enumeration.
        width = max(spec.support.size for row in rewards for spec in row)
        sup = np.zeros((self.num_states, self.num_actions, width))
        prb = np.zeros((self.num_states, self.num_actions, width))
        for s in range(self.num_states):
            for a in range(self.num_actions):
                spec = rewards[s][a]
                sup[s, a, : spec.support.size] = spec.support
                prb[s, a, : spec.probs.size] = spec.probs
        object.__setattr__(self, "_reward_support", sup)
        object.__setattr__(self, "_reward_probs", prb)

    def check_policy(self, policy: Policy) -> None:
        if policy.table.shape != (self.num_states, self.num_actions):
            raise ValidationError(
                f"policy shape {policy.table.shape} does not match MDP "
                f"({self.num_states}, {self.num_actions})"
            )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One logged episode: parallel arrays of length horizon + 1."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=np.int64))
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int64))
        object.__setattr__(self, "rewards", np.asarray(self.rewards, dtype=float))
        n = self.states.size
        if self.actions.size != n or self.rewards.size != n or n < 1:
            raise ValidationError("trajectory arrays must be nonempty and equal length")
        if self.propensities is not None:
            p = np.asarray(self.propensities, dtype=float)
            if p.size != n:
                raise ValidationError("propensities length mismatch")
            if np.any(p <= 0) or np.any(p > 1):
                raise ValidationError("propensities must lie in (0, 1]")
            object.__setattr__(self, "propensities", p)

    @property
    def horizon(self) -> int:
        return self.states.size - 1

    @property
    def steps(self) -> list[tuple]:
        """(state, action, reward, propensity) tuples, propensity None if unlogged."""
        props = self.propensities if self.propensities is not None else [None] * self.states.size
        return [
            (int(s), int(a), float(r), None if p is None else float(p))
            for s, a, r, p in zip(self.states, self.actions, self.rewards, props)
        ]


@dataclass(frozen=True, eq=False)
class LoggedDataset:
    """A batch of trajectories with a uniform horizon, stored as (N, T+1) arrays."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=np.int64))
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int64))
        object.__setattr__(self, "rewards", np.asarray(self.rewards, dtype=float))
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise ValidationError("dataset must be nonempty")
        if self.actions.shape != self.states.shape or self.rewards.shape != self.states.shape:
            raise ValidationError("dataset arrays must share one (N, T+1) shape")
        if self.propensities is not None:
            p = np.asarray(self.propensities, dtype=float)
            if p.shape != self.states.shape:
                raise ValidationError("propensities shape mismatch")
            if np.any(p <= 0) or np.any(p > 1):
                raise ValidationError("propensities must lie in (0, 1]")
            object.__setattr__(self, "propensities", p)

    @classmethod
    def from_trajectories(cls, trajectories: list[Trajectory]) -> "LoggedDataset":
        if not trajectories:
            raise ValidationError("empty dataset")
        horizon = trajectories[0].horizon
        if any(t.horizon != horizon for t in trajectories):
            raise ValidationError("trajectories have mixed horizons")
        known = all(t.propensities is not None for t in trajectories)
        return cls(
            states=np.stack([t.states for t in trajectories]),
            actions=np.stack([t.actions for t in trajectories]),
            rewards=np.stack([t.rewards for t in trajectories]),
            propensities=np.stack([t.propensities for t in trajectories]) if known else None,
        )

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1] - 1

    @property
    def propensities_known(self) -> bool:
        return self.propensities is not None

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            states=self.states[i],
            actions=self.actions[i],
            rewards=self.rewards[i],
            propensities=None if self.propensities is None else self.propensities[i],
        )

    def subset(self, indices: np.ndarray) -> "LoggedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LoggedDataset(
            states=self.states[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            propensities=None if self.propensities is None else self.propensities[idx],
        )


def mean_reward_table(mdp: TabularMdp) -> np.ndarray:
    """Exact mean reward per (state, action)."""
    return np.array([[spec.mean for spec in row] for row in mdp.rewards])


def reward_variance_table(mdp: TabularMdp) -> np.ndarray:
    """Exact reward variance per (state, action)."""
    return np.array([[spec.variance for spec in row] for row in mdp.rewards])


def _categorical_rows(prob_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row from row-wise categorical distributions."""
    cum = np.cumsum(prob_rows, axis=1)
    u = rng.random(prob_rows.shape[0])
    idx = (u[:, None] > cum).sum(axis=1)
    return np.minimum(idx, prob_rows.shape[1] - 1)


def sample_trajectory(mdp: TabularMdp, policy: Policy, rng: np.random.Generator) -> Trajectory:
    """Sample one trajectory under ``policy``; propensities record the action probs."""
    data = sample_dataset(mdp, policy, 1, rng)
    return data.trajectory(0)


def sample_dataset(
    mdp: TabularMdp, policy: Policy, n: int, rng: np.random.Generator
) -> LoggedDataset:
    """Sample ``n`` i.i.d. trajectories under ``policy`` (vectorized across episodes)."""
    mdp.check_policy(policy)
    if n < 1:
        raise ValidationError("need at least one trajectory")
    steps = mdp.horizon + 1
    states = np.empty((n, steps), dtype=np.int64)
    actions = np.empty((n, steps), dtype=np.int64)
    rewards = np.empty((n, steps))
    props = np.empty((n, steps))
    for t in range(steps):
        if t == 0:
            row = np.broadcast_to(mdp.initial_dist, (n, mdp.num_states))
            s = _categorical_rows(row, rng)
        else:
            s = _categorical_rows(mdp.transitions[states[:, t - 1], actions[:, t - 1]], rng)
        a = _categorical_rows(policy.table[s], rng)
        r_idx = _categorical_rows(mdp._reward_probs[s, a], rng)
        states[:, t] = s
        actions[:, t] = a
        rewards[:, t] = mdp._reward_support[s, a, r_idx]
        props[:, t] = policy.table[s, a]
    return LoggedDataset(states=states, actions=actions, rewards=rewards, propensities=props)


def enumerate_dataset(
    mdp: TabularMdp,
    policy: Policy,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> tuple[LoggedDataset, np.ndarray]:
    """Enumerate every positive-probability trajectory under (mdp, policy).

    Returns the outcomes stacked as a LoggedDataset plus the exact probability
    of each row. Raises EnumerationCapError if the outcome count exceeds ``cap``.
    """
    mdp.check_policy(policy)
    steps = mdp.horizon + 1
    states = np.empty((1, 0), dtype=np.int64)
    actions = np.empty((1, 0), dtype=np.int64)
    rewards = np.empty((1, 0))
    probs = np.ones(1)

    def expand(prob_rows: np.ndarray):
        # Branch every partial trajectory over the categorical rows, dropping
        # zero-probability branches. Returns (kept parent index, branch value, prob).
        nonlocal states, actions, rewards, probs
        width = prob_rows.shape[1]
        parent = np.repeat(np.arange(prob_rows.shape[0]), width)
        branch = np.tile(np.arange(width), prob_rows.shape[0])
        p = probs[parent] * prob_rows[parent, branch]
        keep = prob_rows[parent, branch] > 0
        parent, branch, p = parent[keep], branch[keep], p[keep]
        if parent.size > cap:
            raise EnumerationCapError(f"enumeration exceeds cap of {cap} outcomes")
        states = states[parent]
        actions = actions[parent]
        rewards = rewards[parent]
        probs = p
        return parent, branch

    for t in range(steps):
        if t == 0:
            _, s = expand(mdp.initial_dist[None, :])
        else:
            _, s = expand(mdp.transitions[states[:, -1], actions[:, -1]])
        states = np.column_stack([states, s])
        _, a = expand(policy.table[states[:, -1]])
        actions = np.column_stack([actions, a])
        parent, r_idx = expand(mdp._reward_probs[states[:, -1], actions[:, -1]])
        rewards = np.column_stack([rewards, mdp._reward_support[states[:, -1], actions[:, -1], r_idx]])

    props = policy.table[states, actions]
    data = LoggedDataset(states=states, actions=actions, rewards=rewards, propensities=props)
    return data, probs


def enumerate_trajectories(
    mdp: TabularMdp,
    policy: Policy,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> list[tuple[Trajectory, float]]:
    """List every positive-probability trajectory with its exact probability."""
    data, probs = enumerate_dataset(mdp, policy, cap=cap)
    return [(data.trajectory(i), float(probs[i])) for i in range(data.n)]


def exact_policy_value(mdp: TabularMdp, policy: Policy) -> float:
    """Exact discounted value of ``policy`` via backward dynamic programming."""
    mdp.check_policy(policy)
    mu = mean_reward_table(mdp)
    v_next = np.zeros(mdp.num_states)
    for t in range(mdp.horizon, -1, -1):
        q = mu.copy()
        if t < mdp.horizon:
            q += mdp.discount * (mdp.transitions @ v_next)
        v_next = (policy.table * q).sum(axis=1)
    return float(mdp.initial_dist @ v_next)


def mdp_to_dict(mdp: TabularMdp) -> dict:
    return {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "horizon": mdp.horizon,
        "discount": mdp.discount,
        "initial_dist": mdp.initial_dist.tolist(),
        "transitions": mdp.transitions.tolist(),
        "rewards": [
            [{"support": spec.support.tolist(), "probs": spec.probs.tolist()} for spec in row]
            for row in mdp.rewards
        ],
    }


def mdp_from_dict(obj: dict) -> TabularMdp:
    """Build a TabularMdp from the JSON spec format; errors name the offending path."""
    if not isinstance(obj, dict):
        raise ValidationError("MDP spec must be a JSON object")
    for key in ("num_states", "num_actions", "horizon", "discount",
                "initial_dist", "transitions", "rewards"):
        if key not in obj:
            raise ValidationError(f"MDP spec missing field '{key}'")
    unknown = set(obj) - {"num_states", "num_actions", "horizon", "discount",
                          "initial_dist", "transitions", "rewards"}
    if unknown:
        raise ValidationError(f"MDP spec has unknown fields: {sorted(unknown)}")
    num_states, num_actions = int(obj["num_states"]), int(obj["num_actions"])
    rewards = []
    raw_rewards = obj["rewards"]
    if len(raw_rewards) != num_states:
        raise ValidationError("rewards: expected one row per state")
    for s, row in enumerate(raw_rewards):
        if len(row) != num_actions:
            raise ValidationError(f"rewards[{s}]: expected one entry per action")
        specs = []
        for a, cell in enumerate(row):
            try:
                specs.append(RewardSpec(support=cell["support"], probs=cell["probs"]))
            except (KeyError, TypeError):
                raise ValidationError(f"rewards[{s}][{a}] must have 'support' and 'probs'")
            except ValidationError as exc:
                raise ValidationError(f"rewards[{s}][{a}]: {exc}") from exc
        rewards.append(specs)
    return TabularMdp(
        num_states=num_states,
        num_actions=num_actions,
        horizon=int(obj["horizon"]),
        discount=float(obj["discount"]),
        initial_dist=obj["initial_dist"],
        transitions=obj["transitions"],
        rewards=rewards,
    )


def load_mdp(path: str | Path) -> TabularMdp:
    with open(path) as fh:
        return mdp_from_dict(json.load(fh))
