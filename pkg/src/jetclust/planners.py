"""Clustering agents: random, greedy, beam search, and PUCT-guided MCTS
with beam-search tree initialization and a max-roll-out final decision.

All planners return the finished clustering tree together with its
accumulated log-likelihood, which equals the tree's recomputed
log-likelihood by construction.  Ties are always broken toward the
lexicographically smallest action so results are reproducible.
"""

import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .env import (
    Action,
    ClusterState,
    apply_action,
    is_terminal,
    leaf_sets,
    legal_actions,
    reset,
    step,
    tree_from_state,
)
from .shower import FourMomentum, ShowerConfig, Splitting, Tree, splitting_log_likelihood


class PriorPolicy(Protocol):
    """Anything that produces a prior distribution over legal actions."""

    def priors(self, state: ClusterState) -> np.ndarray: ...


class UniformPolicy:
    def priors(self, state: ClusterState) -> np.ndarray:
        m = state.n * (state.n - 1) // 2
        return np.full(m, 1.0 / m)


class ProportionalPsPolicy:
    """Prior proportional to the splitting likelihood p_s of each pair,
    i.e. a temperature-1 softmax over the per-pair log p_s values."""

    def __init__(self, config: ShowerConfig):
        self.config = config

    def priors(self, state: ClusterState) -> np.ndarray:
        logps = np.array([
            splitting_log_likelihood(
                Splitting.from_children(state.particles[a.i], state.particles[a.j]),
                self.config,
            )
            for a in legal_actions(state)
        ])
        return _softmax(logps)


def _softmax(logits: np.ndarray) -> np.ndarray:
    # fsum makes the normalizer independent of summation order, so the
    # distribution is bit-identical under particle permutations.
    z = np.exp(logits - logits.max())
    return z / math.fsum(z)


def fixed_policy(kind: str, config: ShowerConfig | None = None) -> PriorPolicy:
    """'random' for a uniform prior, 'proportional-to-ps' for p_s-weighted."""
    if kind == "random":
        return UniformPolicy()
    if kind == "proportional-to-ps":
        if config is None:
            raise ValueError("proportional-to-ps prior needs the shower config")
        return ProportionalPsPolicy(config)
    raise ValueError(f"unknown fixed policy kind: {kind!r}")


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def cluster_random(
    event: list[FourMomentum] | tuple[FourMomentum, ...],
    config: ShowerConfig,
    rng: np.random.Generator,
) -> tuple[Tree, float]:
    """Uniformly random legal action at every step."""
    state = reset(event)
    while not is_terminal(state):
        actions = legal_actions(state)
        state = step(state, actions[int(rng.integers(len(actions)))], config).next_state
    return tree_from_state(state), state.cumulative_reward


def _pair_rewards(state: ClusterState, config: ShowerConfig) -> list[tuple[Action, float]]:
    return [
        (a, splitting_log_likelihood(
            Splitting.from_children(state.particles[a.i], state.particles[a.j]), config))
        for a in legal_actions(state)
    ]


def cluster_greedy(
    event: list[FourMomentum] | tuple[FourMomentum, ...],
    config: ShowerConfig,
) -> tuple[Tree, float]:
    """Merge the pair with the maximum splitting likelihood at every step;
    ties go to the lexicographically smallest (i, j)."""
    state = reset(event)
    while not is_terminal(state):
        scored = _pair_rewards(state, config)
        best_action, best_reward = scored[0]
        for action, reward in scored[1:]:
            if reward > best_reward:
                best_action, best_reward = action, reward
        state = apply_action(state, best_action, best_reward).next_state
    return tree_from_state(state), state.cumulative_reward


# ---------------------------------------------------------------------------
# Beam search
# ---------------------------------------------------------------------------

@dataclass
class _BeamItem:
    state: ClusterState
    leafsets: tuple[frozenset[int], ...]
    # (action, resulting state) per level, from the beam's start state.
    path: tuple[tuple[Action, ClusterState], ...]


def _partition_key(leafsets: tuple[frozenset[int], ...]) -> tuple[tuple[int, ...], ...]:
    return tuple(sorted(tuple(sorted(s)) for s in leafsets))


def _beam_from_state(state: ClusterState, b: int, config: ShowerConfig) -> list[_BeamItem]:
    """Level-synchronous beam over partial clusterings ranked by cumulative
    log-likelihood.  States with identical leaf-set partitions are collapsed
    to the best-scoring representative, which is lossless because future
    rewards depend only on the current particle multiset.  Returns the final
    beam (complete clusterings), best first."""
    if b < 1:
        raise ValueError(f"beam width must be >= 1, got {b}")
    items = [_BeamItem(state=state, leafsets=leaf_sets(state), path=())]
    while items[0].state.n > 1:
        survivors: dict[tuple, _BeamItem] = {}
        for item in items:
            for action, reward in _pair_rewards(item.state, config):
                nxt = apply_action(item.state, action, reward).next_state
                i, j = action.i, action.j
                nls = tuple(
                    s for k, s in enumerate(item.leafsets) if k != i and k != j
                ) + (item.leafsets[i] | item.leafsets[j],)
                key = _partition_key(nls)
                cand = _BeamItem(state=nxt, leafsets=nls, path=item.path + ((action, nxt),))
                held = survivors.get(key)
                if held is None or _beats(cand.state, held.state):
                    survivors[key] = cand
        items = sorted(survivors.values(), key=lambda it: (-it.state.cumulative_reward, it.state.history))
        items = items[:b]
    return items


def _beats(a: ClusterState, b: ClusterState) -> bool:
    if a.cumulative_reward != b.cumulative_reward:
        return a.cumulative_reward > b.cumulative_reward
    return a.history < b.history


def cluster_beam(
    event: list[FourMomentum] | tuple[FourMomentum, ...],
    b: int,
    config: ShowerConfig,
) -> tuple[Tree, float]:
    """Keep the b most likely partial clusterings per level; return the
    best complete one.  Width 1 reproduces cluster_greedy exactly."""
    final = _beam_from_state(reset(event), b, config)
    best = final[0].state
    return tree_from_state(best), best.cumulative_reward


# ---------------------------------------------------------------------------
# MCTS
# ---------------------------------------------------------------------------

@dataclass
class MctsConfig:
    """Search hyperparameters.  final_rule is 'max-rollout' (pick the action
    whose subtree produced the single best roll-out) or 'puct-visits' (the
    ablation that picks the most visited action).  rollout_rule 'policy-sample'
    replaces the PUCT descent by sampling the prior (ablation)."""

    c: float = 1.0
    n_mcts: int = 10
    beam_init_b: int = 3
    use_beam_init: bool = True
    final_rule: str = "max-rollout"
    rollout_rule: str = "puct"
    rng_seed: int = 0

    def validate(self) -> None:
        if self.c <= 0.0:
            raise ValueError(f"exploration constant must be > 0, got {self.c}")
        if self.n_mcts < 0 or self.beam_init_b < 0:
            raise ValueError("n_mcts and beam_init_b must be non-negative")
        if self.final_rule not in ("max-rollout", "puct-visits"):
            raise ValueError(f"unknown final_rule: {self.final_rule!r}")
        if self.rollout_rule not in ("puct", "policy-sample"):
            raise ValueError(f"unknown rollout_rule: {self.rollout_rule!r}")
        if self.n_mcts == 0 and not (self.use_beam_init and self.beam_init_b > 0):
            raise ValueError("n_mcts=0 without beam initialization leaves nothing to decide from")


class SearchNode:
    """One state of the search tree with per-action visit statistics."""

    __slots__ = ("state", "actions", "action_index", "priors", "n_visits",
                 "n_sa", "w_sa", "best_return", "children")

    def __init__(self, state: ClusterState, policy: PriorPolicy):
        self.state = state
        self.actions = legal_actions(state)
        self.action_index = {a: k for k, a in enumerate(self.actions)}
        m = len(self.actions)
        self.priors = policy.priors(state) if m else np.zeros(0)
        self.n_visits = 0
        self.n_sa = np.zeros(m, dtype=np.int64)
        self.w_sa = np.zeros(m)
        self.best_return = np.full(m, -np.inf)
        self.children: list["SearchNode | None"] = [None] * m

    def q_values(self) -> np.ndarray:
        # Unvisited actions read as 0.5: neutral on the normalized scale.
        return np.where(self.n_sa > 0, self.w_sa / np.maximum(self.n_sa, 1), 0.5)

    def puct_scores(self, c: float) -> np.ndarray:
        u = c * self.priors * math.sqrt(max(self.n_visits, 1)) / (1.0 + self.n_sa)
        return self.q_values() + u


def puct_score(node: SearchNode, action: Action, c: float) -> float:
    """Upper confidence bound Q + c * prior * sqrt(N_s) / (1 + N_sa)."""
    k = node.action_index[action]
    q = node.w_sa[k] / node.n_sa[k] if node.n_sa[k] > 0 else 0.5
    return q + c * node.priors[k] * math.sqrt(max(node.n_visits, 1)) / (1.0 + node.n_sa[k])


@dataclass
class ReturnNormalizer:
    """Maps raw episode returns to [0, 1] by the running min/max observed
    in the current search; 0.5 while the range is degenerate."""

    lo: float = math.inf
    hi: float = -math.inf

    def update(self, value: float) -> None:
        self.lo = min(self.lo, value)
        self.hi = max(self.hi, value)

    def normalize(self, value: float) -> float:
        if not (self.hi > self.lo):
            return 0.5
        return min(max((value - self.lo) / (self.hi - self.lo), 0.0), 1.0)


def _backup(path: list[tuple[SearchNode, int]], ret: float, normalizer: ReturnNormalizer) -> None:
    normalizer.update(ret)
    w = normalizer.normalize(ret)
    for node, k in path:
        node.n_visits += 1
        node.n_sa[k] += 1
        node.w_sa[k] += w
        if ret > node.best_return[k]:
            node.best_return[k] = ret


def _ensure_child(node: SearchNode, k: int, policy: PriorPolicy, config: ShowerConfig,
                  state: ClusterState | None = None) -> SearchNode:
    child = node.children[k]
    if child is None:
        if state is None:
            state = step(node.state, node.actions[k], config).next_state
        child = SearchNode(state, policy)
        node.children[k] = child
    return child


def _insert_beam_trajectories(
    root: SearchNode,
    policy: PriorPolicy,
    cfg: MctsConfig,
    config: ShowerConfig,
    normalizer: ReturnNormalizer,
) -> None:
    for item in _beam_from_state(root.state, cfg.beam_init_b, config):
        node = root
        path: list[tuple[SearchNode, int]] = []
        for action, state_after in item.path:
            k = node.action_index[action]
            path.append((node, k))
            node = _ensure_child(node, k, policy, config, state=state_after)
        _backup(path, item.state.cumulative_reward, normalizer)


def _run_rollout(
    root: SearchNode,
    policy: PriorPolicy,
    cfg: MctsConfig,
    config: ShowerConfig,
    rng: np.random.Generator,
    normalizer: ReturnNormalizer,
) -> None:
    node = root
    path: list[tuple[SearchNode, int]] = []
    while not is_terminal(node.state):
        if cfg.rollout_rule == "policy-sample":
            k = int(rng.choice(len(node.actions), p=node.priors / node.priors.sum()))
        else:
            k = int(np.argmax(node.puct_scores(cfg.c)))
        path.append((node, k))
        node = _ensure_child(node, k, policy, config)
    _backup(path, node.state.cumulative_reward, normalizer)


def _decide(
    root: SearchNode,
    policy: PriorPolicy,
    cfg: MctsConfig,
    config: ShowerConfig,
    rng: np.random.Generator,
    normalizer: ReturnNormalizer,
) -> int:
    if cfg.use_beam_init and cfg.beam_init_b > 0:
        _insert_beam_trajectories(root, policy, cfg, config, normalizer)
    for _ in range(cfg.n_mcts):
        _run_rollout(root, policy, cfg, config, rng, normalizer)
    if cfg.final_rule == "puct-visits":
        return int(np.argmax(root.n_sa))
    return int(np.argmax(root.best_return))


def mcts_decide(
    root_state: ClusterState,
    policy: PriorPolicy,
    cfg: MctsConfig,
    config: ShowerConfig,
    rng: np.random.Generator,
) -> Action:
    """One MCTS decision from scratch: seed the tree with beam-search
    trajectories, run the PUCT roll-outs to termination, and return the
    action behind the best roll-out (or the most visited one under the
    puct-visits ablation)."""
    if is_terminal(root_state):
        raise ValueError("cannot decide at a terminal state")
    cfg.validate()
    root = SearchNode(root_state, policy)
    k = _decide(root, policy, cfg, config, rng, ReturnNormalizer())
    return root.actions[k]


def cluster_mcts(
    event: list[FourMomentum] | tuple[FourMomentum, ...],
    policy: PriorPolicy,
    cfg: MctsConfig,
    config: ShowerConfig,
    rng: np.random.Generator,
    featurizer: Callable[[ClusterState], np.ndarray] | None = None,
) -> tuple[Tree, float, list[tuple[np.ndarray, int]]]:
    """Run MCTS decisions until the clustering is complete, reusing the
    chosen child's subtree (and the return normalizer) between decisions.
    When a featurizer is given, (state-features, chosen-action) pairs are
    collected for policy training."""
    cfg.validate()
    root = SearchNode(reset(event), policy)
    normalizer = ReturnNormalizer()
    examples: list[tuple[np.ndarray, int]] = []
    while not is_terminal(root.state):
        k = _decide(root, policy, cfg, config, rng, normalizer)
        if featurizer is not None:
            examples.append((featurizer(root.state), k))
        root = _ensure_child(root, k, policy, config)
    return tree_from_state(root.state), root.state.cumulative_reward, examples


def cluster_policy(
    event: list[FourMomentum] | tuple[FourMomentum, ...],
    policy: PriorPolicy,
    config: ShowerConfig,
) -> tuple[Tree, float]:
    """Roll out the policy directly, taking its argmax action each step."""
    state = reset(event)
    while not is_terminal(state):
        actions = legal_actions(state)
        k = int(np.argmax(policy.priors(state)))
        state = step(state, actions[k], config).next_state
    return tree_from_state(state), state.cumulative_reward
