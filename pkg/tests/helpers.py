"""Shared builders for test MDP instances and policies."""
from __future__ import annotations

import numpy as np

from dml_ope import Policy, RewardSpec, TabularMdp


def bernoulli(p: float) -> RewardSpec:
    return RewardSpec(support=[0.0, 1.0], probs=[1.0 - p, p])


def point_mass(r: float) -> RewardSpec:
    return RewardSpec(support=[r], probs=[1.0])


def random_mdp(
    rng: np.random.Generator,
    num_states: int,
    num_actions: int,
    horizon: int,
    discount: float = 0.9,
) -> TabularMdp:
    """Random enumerable MDP with Bernoulli rewards, click rates in [0.1, 0.9]."""
    transitions = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    rewards = [
        [bernoulli(rng.uniform(0.1, 0.9)) for _ in range(num_actions)]
        for _ in range(num_states)
    ]
    return TabularMdp(
        num_states=num_states,
        num_actions=num_actions,
        horizon=horizon,
        discount=discount,
        initial_dist=rng.dirichlet(np.ones(num_states)),
        transitions=transitions,
        rewards=rewards,
    )


def random_policy(rng: np.random.Generator, num_states: int, num_actions: int) -> Policy:
    """Strictly positive random policy (Dirichlet rows, floored away from zero)."""
    table = 0.1 + rng.dirichlet(np.ones(num_actions), size=num_states)
    return Policy(table=table / table.sum(axis=1, keepdims=True))


def three_state_mdp(discount: float = 0.9) -> TabularMdp:
    """Fixed 3-state / 2-action / horizon-2 instance used across calibration tests."""
    transitions = np.array(
        [
            [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3]],
            [[0.3, 0.4, 0.3], [0.1, 0.2, 0.7]],
            [[0.5, 0.25, 0.25], [0.3, 0.3, 0.4]],
        ]
    )
    rewards = [
        [bernoulli(0.7), bernoulli(0.3)],
        [bernoulli(0.5), bernoulli(0.6)],
        [bernoulli(0.2), bernoulli(0.8)],
    ]
    return TabularMdp(
        num_states=3,
        num_actions=2,
        horizon=2,
        discount=discount,
        initial_dist=[0.5, 0.3, 0.2],
        transitions=transitions,
        rewards=rewards,
    )


def three_state_policies() -> tuple[Policy, Policy]:
    behavior = Policy(table=[[0.6, 0.4], [0.5, 0.5], [0.3, 0.7]])
    evaluation = Policy(table=[[0.8, 0.2], [0.4, 0.6], [0.7, 0.3]])
    return behavior, evaluation


def bandit_mdp() -> TabularMdp:
    """Horizon-0 (contextual bandit) instance with two contexts and two arms."""
    rewards = [
        [bernoulli(0.6), bernoulli(0.3)],
        [bernoulli(0.4), bernoulli(0.8)],
    ]
    return TabularMdp(
        num_states=2,
        num_actions=2,
        horizon=0,
        discount=1.0,
        initial_dist=[0.55, 0.45],
        transitions=np.full((2, 2, 2), 0.5),
        rewards=rewards,
    )


def bandit_policies() -> tuple[Policy, Policy]:
    behavior = Policy(table=[[0.5, 0.5], [0.6, 0.4]])
    evaluation = Policy(table=[[0.75, 0.25], [0.3, 0.7]])
    return behavior, evaluation
