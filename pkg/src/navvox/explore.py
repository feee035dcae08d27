"""Exploration over the walk graph: MDP machinery and sampling strategies.

The agent moves over the reachable component by choosing one of eight compass
directions; the actual transition goes to the neighbor best aligned with the
chosen direction. States are fixed-length feature vectors combining local
importance statistics with global guidance toward unexplored important space.

Strategies:
  random          -- uniform random action each step (a walk)
  random-teleport -- uniform voxel sample each step (no walk constraint)
  bfs / dfs       -- classic traversal enumeration from the seed
  heuristic       -- greedy walk toward the best unvisited voxel in a bounded
                     graph-distance horizon
  rl              -- greedy actions from a supplied policy function
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .geom import Index
from .importance import ImportanceField
from .walk import ReachableSet, WalkGraph

ACTION_NAMES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
_D = math.sqrt(0.5)
ACTION_VECTORS = np.asarray(
    [
        (0.0, 1.0),
        (_D, _D),
        (1.0, 0.0),
        (_D, -_D),
        (0.0, -1.0),
        (-_D, -_D),
        (-1.0, 0.0),
        (-_D, _D),
    ]
)

STATE_DIM = 9
STAGNATION_NORM = 50  # steps-without-reward count that saturates the feature

STRATEGIES = ("random", "random-teleport", "bfs", "dfs", "heuristic", "rl")

PolicyFn = Callable[[np.ndarray], int]


@dataclass(frozen=True)
class RewardParams:
    """Reward shaping constants; importance is credited on first visit only."""

    lambda_step: float = 0.01
    p_revisit: float = 0.25

    def __post_init__(self):
        if self.lambda_step < 0 or self.p_revisit < 0:
            raise ValueError("reward penalties must be non-negative")


@dataclass
class Trajectory:
    """Ordered waypoints with per-step rewards and the coverage curve.

    ``coverage_curve[k]`` is the importance coverage after waypoint ``k``
    (index 0 is the start). For walk strategies consecutive waypoints are
    graph-adjacent or equal (blocked step); bfs/dfs/random-teleport enumerate
    voxels, so consecutive entries may jump.
    """

    waypoints: list[Index]
    rewards: list[float]
    coverage_curve: list[float]
    strategy: str = ""
    seed: int = 0


def reward(field: ImportanceField, v_next: Index, visited: Iterable[Index], params: RewardParams) -> float:
    """Step reward: first-visit importance minus step and revisit penalties."""
    visited = visited if isinstance(visited, (set, frozenset)) else set(visited)
    revisit = v_next in visited
    gain = 0.0 if revisit else field.value(v_next)
    return gain - params.lambda_step - (params.p_revisit if revisit else 0.0)


def step(graph: WalkGraph, current: Index, action: int) -> Index:
    """Neighbor best aligned with the action direction; ties take the lowest
    voxel index; with no neighbors the agent stays put."""
    neighbors = graph.adjacency[current]
    if not neighbors:
        return current
    d = ACTION_VECTORS[action]
    cx, cy, _ = graph.centers[current]
    best: Index | None = None
    best_dot = -np.inf
    for n in neighbors:  # adjacency is sorted, so first win == lowest index
        nx, ny, _ = graph.centers[n]
        dx, dy = nx - cx, ny - cy
        norm = math.hypot(dx, dy)
        dot = -1.0 if norm == 0 else (d[0] * dx + d[1] * dy) / norm
        if dot > best_dot:
            best, best_dot = n, dot
    return best  # type: ignore[return-value]


def _encode_core(
    pos: np.ndarray,
    imp: np.ndarray,
    imp_max: float,
    adj: Sequence[np.ndarray],
    important_ords: np.ndarray,
    diameter: float,
    visited_mask: np.ndarray,
    current: int,
    steps_since_reward: int,
    cov: float,
) -> np.ndarray:
    out = np.zeros(STATE_DIM)
    scale = imp_max if imp_max > 0 else 1.0
    out[0] = imp[current] / scale
    out[1] = cov
    neigh = adj[current]
    if len(neigh):
        vals = imp[neigh]
        out[2] = vals.mean() / scale
        out[3] = vals.max() / scale
        out[4] = int(((vals > 0) & ~visited_mask[neigh]).sum()) / 8.0
    out[5] = min(steps_since_reward / STAGNATION_NORM, 1.0)

    target = -1
    if len(important_ords):
        open_mask = ~visited_mask[important_ords]
        if open_mask.any():
            cands = important_ords[open_mask]
            diffs = pos[cands] - pos[current]
            d2 = np.einsum("ij,ij->i", diffs, diffs)
            target = int(cands[int(np.argmin(d2))])
    if target < 0:
        out[6:8] = 0.0
        out[8] = 1.0
    else:
        dx = pos[target, 0] - pos[current, 0]
        dy = pos[target, 1] - pos[current, 1]
        norm = math.hypot(dx, dy)
        if norm > 0:
            out[6] = dx / norm
            out[7] = dy / norm
        dist = float(np.linalg.norm(pos[target] - pos[current]))
        out[8] = min(dist / diameter, 1.0) if diameter > 0 else 1.0
    return out


def graph_diameter(graph: WalkGraph) -> float:
    """Diagonal of the walkable bounding box; the distance normalizer."""
    if not len(graph):
        return 1.0
    span = graph.positions.max(axis=0) - graph.positions.min(axis=0)
    d = float(np.linalg.norm(span))
    return d if d > 0 else 1.0


def encode_state(
    graph: WalkGraph,
    field: ImportanceField,
    visited: Iterable[Index],
    current: Index,
    steps_since_reward: int,
) -> np.ndarray:
    """Feature vector for one agent state; see ExplorationEnv for the layout.

    Order: current importance, coverage, mean/max neighbor importance, count
    of unvisited important neighbors (/8), stagnation, 2D direction to the
    nearest unvisited important voxel, and its normalized distance.
    """
    imp = np.asarray([field.value(i) for i in graph.nodes])
    imp_max = float(imp.max()) if len(imp) else 0.0
    visited_set = set(visited)
    mask = np.asarray([i in visited_set for i in graph.nodes], dtype=bool)
    important = np.flatnonzero(imp > 0)
    total = field.total
    if total > 0:
        cov = sum(field.value(i) for i in visited_set if i in field.values) / total
    else:
        cov = len([i for i in visited_set if i in field.values]) / max(len(graph), 1)
    return _encode_core(
        graph.positions,
        imp,
        imp_max,
        graph.adj_ordinals,
        important,
        graph_diameter(graph),
        mask,
        graph.ordinal[current],
        steps_since_reward,
        float(cov),
    )


@dataclass
class EpisodeState:
    current: int
    visited_mask: np.ndarray
    visited_count: int
    imp_visited: float
    steps_since_reward: int


class ExplorationEnv:
    """Shared episode machinery over one (graph, field, reachable set).

    Precomputes the arrays every step needs; immutable between episodes, so
    independent episodes may run concurrently on one env instance each with
    its own EpisodeState.
    """

    def __init__(
        self,
        graph: WalkGraph,
        field: ImportanceField,
        reach: ReachableSet,
        reward_params: RewardParams | None = None,
    ):
        self.graph = graph
        self.field = field
        self.reach = reach
        self.reward_params = reward_params or RewardParams()
        self.imp = np.asarray([field.value(i) for i in graph.nodes])
        self.imp_max = float(self.imp.max()) if len(self.imp) else 0.0
        self.important_ords = np.flatnonzero(self.imp > 0)
        self.diameter = graph_diameter(graph)
        self.start = graph.ordinal[reach.seed]
        self.member_ords = np.asarray(sorted(graph.ordinal[i] for i in reach.members))
        max_deg = max((len(a) for a in graph.adj_ordinals), default=0)
        self.nbr_matrix = np.full((len(graph), max(max_deg, 1)), -1, dtype=np.int64)
        for k, a in enumerate(graph.adj_ordinals):
            self.nbr_matrix[k, : len(a)] = a

    def reset(self, start: int | None = None) -> EpisodeState:
        cur = self.start if start is None else start
        mask = np.zeros(len(self.graph), dtype=bool)
        mask[cur] = True
        return EpisodeState(cur, mask, 1, float(self.imp[cur]), 0)

    def coverage_of(self, st: EpisodeState) -> float:
        if self.field.total > 0:
            return st.imp_visited / self.field.total
        return st.visited_count / max(len(self.graph), 1)

    def encode(self, st: EpisodeState) -> np.ndarray:
        return _encode_core(
            self.graph.positions,
            self.imp,
            self.imp_max,
            self.graph.adj_ordinals,
            self.important_ords,
            self.diameter,
            st.visited_mask,
            st.current,
            st.steps_since_reward,
            self.coverage_of(st),
        )

    def _step_ord(self, current: int, action: int) -> int:
        neigh = self.graph.adj_ordinals[current]
        if not len(neigh):
            return current
        pos = self.graph.positions
        d = ACTION_VECTORS[action]
        dx = pos[neigh, 0] - pos[current, 0]
        dy = pos[neigh, 1] - pos[current, 1]
        norm = np.hypot(dx, dy)
        dots = np.where(norm > 0, (d[0] * dx + d[1] * dy) / np.where(norm > 0, norm, 1.0), -1.0)
        return int(neigh[int(np.argmax(dots))])  # argmax keeps the first (lowest-index) tie

    def visit(self, st: EpisodeState, nxt: int) -> float:
        """Advance the episode to voxel ``nxt`` and return the step reward."""
        revisit = bool(st.visited_mask[nxt])
        gain = 0.0 if revisit else float(self.imp[nxt])
        r = gain - self.reward_params.lambda_step - (self.reward_params.p_revisit if revisit else 0.0)
        if not revisit:
            st.visited_mask[nxt] = True
            st.visited_count += 1
            st.imp_visited += float(self.imp[nxt])
        st.steps_since_reward = 0 if gain > 0 else st.steps_since_reward + 1
        st.current = nxt
        return r

    def step_action(self, st: EpisodeState, action: int) -> tuple[int, float]:
        nxt = self._step_ord(st.current, action)
        return nxt, self.visit(st, nxt)


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    """Per-episode random stream derived from the master seed."""
    return np.random.default_rng([int(seed), int(episode)])


def _heuristic_target(env: ExplorationEnv, st: EpisodeState, horizon: int) -> list[int] | None:
    """Path (excluding current) to the best unvisited voxel within the horizon.

    Ranking: highest importance, then shortest graph distance, then lowest
    voxel index. Level-synchronized search with an exact early stop: once the
    best candidate's importance reaches the global maximum over unvisited
    voxels, deeper candidates can only lose on distance. Returns None when
    everything within the horizon is visited.
    """
    open_imp = env.imp[env.important_ords[~st.visited_mask[env.important_ords]]]
    max_open = float(open_imp.max()) if len(open_imp) else 0.0

    parent = np.full(len(env.graph), -1, dtype=np.int64)
    parent[st.current] = st.current
    best: tuple[float, int, int] | None = None  # (-imp, dist, ordinal)
    level = np.asarray([st.current], dtype=np.int64)
    width = env.nbr_matrix.shape[1]
    depth = 0
    while len(level):
        unvisited = level[~st.visited_mask[level]]
        if len(unvisited):
            vals = env.imp[unvisited]
            pick = np.lexsort((unvisited, -vals))[0]
            cand = (-float(vals[pick]), depth, int(unvisited[pick]))
            if best is None or cand < best:
                best = cand
        if best is not None and -best[0] >= max_open:
            break  # deeper candidates can only lose on distance
        if depth >= horizon:
            break
        nxt = env.nbr_matrix[level].ravel()
        src = np.repeat(level, width)
        keep = nxt >= 0
        nxt, src = nxt[keep], src[keep]
        keep = parent[nxt] < 0
        nxt, src = nxt[keep], src[keep]
        if not len(nxt):
            break
        uniq, first = np.unique(nxt, return_index=True)
        parent[uniq] = src[first]
        level = uniq
        depth += 1
    if best is None:
        return None
    path = [best[2]]
    while path[-1] != st.current:
        path.append(int(parent[path[-1]]))
    path.reverse()
    return path[1:]


HEURISTIC_HORIZON = 30


def run_strategy(
    env: ExplorationEnv,
    kind: str,
    budget: int,
    seed: int,
    policy: PolicyFn | None = None,
    start: Index | None = None,
    stop_at_coverage: float | None = None,
) -> Trajectory:
    """Sample a trajectory of at most ``budget`` waypoints (start included).

    Fully reproducible from ``seed``; all strategies record rewards and the
    coverage curve through the same episode machinery. ``stop_at_coverage``
    ends the run early once that importance coverage is reached (used by
    efficiency benchmarks; the truncated prefix is identical to the full run).
    """
    kind = kind.lower()
    if kind not in STRATEGIES:
        raise ValueError(f"unknown strategy {kind!r}; expected one of {STRATEGIES}")
    if budget < 1:
        raise ValueError("budget must be at least 1 waypoint")
    if kind == "rl" and policy is None:
        raise ValueError("rl strategy requires a trained policy")

    rng = episode_rng(seed, 0)
    start_ord = env.start if start is None else env.graph.ordinal[start]
    st = env.reset(start_ord)
    nodes = env.graph.nodes
    waypoints = [nodes[st.current]]
    rewards: list[float] = []
    curve = [env.coverage_of(st)]

    if kind == "bfs":
        seen = {start_ord}
        queue: deque[int] = deque([start_ord])
        order: list[int] = []
        while queue and len(order) < budget - 1:
            cur = queue.popleft()
            for nxt in env.graph.adj_ordinals[cur]:
                nxt = int(nxt)
                if nxt not in seen:
                    seen.add(nxt)
                    order.append(nxt)
                    queue.append(nxt)
        for nxt in order[: budget - 1]:
            rewards.append(env.visit(st, nxt))
            waypoints.append(nodes[nxt])
            curve.append(env.coverage_of(st))
            if stop_at_coverage is not None and curve[-1] >= stop_at_coverage:
                break
        return Trajectory(waypoints, rewards, curve, kind, seed)

    if kind == "dfs":
        stack = [start_ord]
        seen = set()
        first = True
        while stack and len(waypoints) < budget:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            if first:
                first = False  # the start voxel is already waypoint 0
            else:
                rewards.append(env.visit(st, cur))
                waypoints.append(nodes[cur])
                curve.append(env.coverage_of(st))
                if stop_at_coverage is not None and curve[-1] >= stop_at_coverage:
                    break
            for nxt in env.graph.adj_ordinals[cur][::-1]:  # pop lowest index first
                nxt = int(nxt)
                if nxt not in seen:
                    stack.append(nxt)
        return Trajectory(waypoints, rewards, curve, kind, seed)

    plan: list[int] = []  # heuristic path commitment
    for _ in range(budget - 1):
        if kind == "random":
            nxt, r = env.step_action(st, int(rng.integers(len(ACTION_NAMES))))
        elif kind == "random-teleport":
            nxt = int(env.member_ords[int(rng.integers(len(env.member_ords)))])
            r = env.visit(st, nxt)
        elif kind == "rl":
            action = int(policy(env.encode(st)))  # type: ignore[misc]
            nxt, r = env.step_action(st, action)
        else:  # heuristic
            if not plan:
                plan = _heuristic_target(env, st, HEURISTIC_HORIZON) or []
            if plan:
                nxt = plan.pop(0)
                r = env.visit(st, nxt)
            else:
                nxt, r = env.step_action(st, int(rng.integers(len(ACTION_NAMES))))
        rewards.append(r)
        waypoints.append(nodes[nxt])
        curve.append(env.coverage_of(st))
        if stop_at_coverage is not None and curve[-1] >= stop_at_coverage:
            break
    return Trajectory(waypoints, rewards, curve, kind, seed)


def unique_visit_curve(traj: Trajectory) -> list[int]:
    """Distinct voxels visited after each waypoint."""
    seen: set[Index] = set()
    out = []
    for w in traj.waypoints:
        seen.add(w)
        out.append(len(seen))
    return out


def samples_to_coverage(traj: Trajectory, target: float) -> int | None:
    """Unique samples spent when the coverage curve first reaches ``target``."""
    uniq = unique_visit_curve(traj)
    for k, c in enumerate(traj.coverage_curve):
        if c >= target:
            return uniq[k]
    return None


def save_trajectory(traj: Trajectory, path) -> None:
    """JSON-lines dump: one record per step."""
    lines = []
    for k, w in enumerate(traj.waypoints):
        rec = {
            "step": k,
            "voxel": list(w),
            "reward": traj.rewards[k - 1] if k > 0 else None,
            "coverage": traj.coverage_curve[k],
        }
        lines.append(json.dumps(rec, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")
