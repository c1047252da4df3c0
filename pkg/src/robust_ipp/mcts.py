"""Monte Carlo tree search over steering sequences with vector rewards.

Scalar mode is plain UCT. Pareto mode scores children with a Pareto UCB
vector and picks uniformly among the non-dominated ones.

Rewards are read from precomputed maps (one layer per objective) at the cell
under the robot. A simulation returns the expanded node's own cell reward
plus the undiscounted sum collected by driving straight for
``rollout_steps`` steps.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from robust_ipp.world import _step

SCALAR = "scalar"
PARETO = "pareto"


@dataclass(frozen=True)
class SearchConfig:
    exploration_c: float = 1.0
    iterations: int = 500
    rollout_steps: int = 5
    objective_count: int = 1

    def __post_init__(self):
        if self.exploration_c <= 0:
            raise ValueError("exploration_c must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.rollout_steps < 0:
            raise ValueError("rollout_steps must be >= 0")
        if self.objective_count not in (1, 2):
            raise ValueError("objective_count must be 1 or 2")


class SearchNode:
    __slots__ = (
        "pose", "incoming_action", "visit_count", "reward_sum", "children",
        "untried_actions", "immediate", "ended_here", "parent",
    )

    def __init__(self, pose, incoming_action, untried_actions, immediate, parent=None):
        self.pose = pose
        self.incoming_action = incoming_action
        self.visit_count = 0
        self.reward_sum = [0.0] * len(immediate)
        self.children = []
        self.untried_actions = list(untried_actions)
        self.immediate = immediate
        # simulations whose selection path stopped at this node
        self.ended_here = 0
        self.parent = parent

    @property
    def is_terminal(self):
        return not self.untried_actions and not self.children

    @property
    def mean_reward(self):
        if self.visit_count == 0:
            raise ValueError("mean reward undefined for an unvisited node")
        return [r / self.visit_count for r in self.reward_sum]


class RewardLookup:
    """Nearest-cell access to stacked reward maps of shape (D_r, H, W)."""

    def __init__(self, layers, geometry):
        layers = np.asarray(layers, dtype=float)
        if layers.ndim == 2:
            layers = layers[None]
        if layers.shape[1:] != geometry.shape:
            raise ValueError("reward maps must match the grid shape")
        self.geometry = geometry
        self.dim = layers.shape[0]
        # per-cell reward tuples; python lists are faster than ndarray indexing here
        self._cells = [[tuple(map(float, layers[:, i, j])) for j in range(geometry.n_cols)] for i in range(geometry.n_rows)]
        g = geometry
        self._origin = (g.x1_min, g.x2_min)
        self._inv = (1.0 / g.dx1, 1.0 / g.dx2)
        self._last = (g.n_cols - 1, g.n_rows - 1)

    def __call__(self, x1, x2):
        j = int((x1 - self._origin[0]) * self._inv[0])
        i = int((x2 - self._origin[1]) * self._inv[1])
        j = 0 if j < 0 else (self._last[0] if j > self._last[0] else j)
        i = 0 if i < 0 else (self._last[1] if i > self._last[1] else i)
        return self._cells[i][j]


def ucb_value(node, parent_visits, exploration_c):
    return node.reward_sum[0] / node.visit_count + exploration_c * math.sqrt(
        2.0 * math.log(parent_visits) / node.visit_count
    )


def pucb_bonus(parent_visits, visits, d_r, exploration_c=1.0):
    return exploration_c * math.sqrt((4.0 * math.log(parent_visits) + math.log(d_r)) / (2 * visits))


def pucb_vector(node, parent_visits, d_r, exploration_c=1.0):
    bonus = pucb_bonus(parent_visits, node.visit_count, d_r, exploration_c)
    return [r / node.visit_count + bonus for r in node.reward_sum]


def pareto_front(vectors):
    """Indices of vectors not weakly dominated by any other vector.

    Equal vectors do not dominate each other, so duplicates survive together.
    """
    vecs = np.asarray(vectors, dtype=float)
    if vecs.size == 0:
        return []
    if vecs.ndim == 1:
        vecs = vecs[:, None]
    ge = np.all(vecs[:, None, :] >= vecs[None, :, :], axis=2)
    gt = np.any(vecs[:, None, :] > vecs[None, :, :], axis=2)
    dominated = np.any(ge & gt, axis=0)
    return [int(i) for i in np.flatnonzero(~dominated)]


def _front_small(vectors):
    # pure-python twin of pareto_front for the handful of children per node;
    # b >= a componentwise with b != a is exactly weak dominance
    out = []
    if len(vectors[0]) == 2:
        for i, (a0, a1) in enumerate(vectors):
            for b0, b1 in vectors:
                if b0 >= a0 and b1 >= a1 and (b0 > a0 or b1 > a1):
                    break
            else:
                out.append(i)
        return out
    for i, a in enumerate(vectors):
        for b in vectors:
            if b != a and all(x >= y for x, y in zip(b, a)):
                break
        else:
            out.append(i)
    return out


def select_child(node, rng, mode, exploration_c=1.0):
    n_p = node.visit_count
    children = node.children
    if mode == SCALAR:
        best, best_val = children[0], ucb_value(children[0], n_p, exploration_c)
        for child in children[1:]:
            val = ucb_value(child, n_p, exploration_c)
            if val > best_val:
                best, best_val = child, val
        return best
    # inlined pucb_vector; same operation order, so bit-identical
    log_term = 4.0 * math.log(n_p) + math.log(len(node.reward_sum))
    vectors = []
    for child in children:
        n = child.visit_count
        bonus = exploration_c * math.sqrt(log_term / (2 * n))
        vectors.append([r / n + bonus for r in child.reward_sum])
    front = _front_small(vectors)
    return children[front[int(rng.integers(len(front)))]]


class _Planner:
    def __init__(self, reward_maps, motion, workspace):
        self.reward = reward_maps
        self.motion = motion
        self.workspace = workspace
        self.straight = motion.steering_set[motion.straight_index]

    def make_node(self, pose, action, parent):
        return SearchNode(
            pose, action, self.workspace.feasible_actions(pose, self.motion), self.reward(pose[0], pose[1]), parent
        )

    def step(self, pose, steering):
        return _step(pose[0], pose[1], pose[2], steering, self.motion.speed, self.motion.dt)


def expand(node, rng, planner):
    """Pop a uniformly drawn untried action and attach the resulting child."""
    k = int(rng.integers(len(node.untried_actions)))
    action = node.untried_actions.pop(k)
    pose = planner.step(node.pose, planner.motion.steering_set[action])
    child = planner.make_node(pose, action, node)
    node.children.append(child)
    return child


def rollout(pose, steps, planner):
    total = [0.0] * planner.reward.dim
    is_free = planner.workspace.is_free
    for _ in range(steps):
        pose = planner.step(pose, planner.straight)
        if not is_free(pose[0], pose[1]):
            break
        r = planner.reward(pose[0], pose[1])
        for d in range(len(total)):
            total[d] += r[d]
    return total


def backpropagate(path, reward):
    for node in path:
        node.visit_count += 1
        rs = node.reward_sum
        for d in range(len(rs)):
            rs[d] += reward[d]


def simulate(node, steps, planner):
    """Return of one simulation from ``node``: own cell reward plus straight rollout."""
    ret = rollout(node.pose, steps, planner)
    return [a + b for a, b in zip(node.immediate, ret)]


@dataclass
class SearchResult:
    actions: list
    root: SearchNode
    terminal: bool = False
    steering: list = field(default_factory=list)


def best_sequence(root):
    actions = []
    node = root
    while node.children:
        node = max(node.children, key=lambda c: (c.visit_count, -c.incoming_action))
        actions.append(node.incoming_action)
    return actions


def search(root_pose, reward_maps, config, rng, motion, workspace, mode=None, expansion_rng=None):
    """Run ``config.iterations`` MCTS cycles from ``root_pose``.

    ``reward_maps`` is a :class:`RewardLookup`. ``mode`` defaults to scalar
    UCT for one objective and Pareto selection otherwise. ``rng`` drives
    Pareto tie draws and ``expansion_rng`` (default ``rng``) the expansion
    order. Returns the most-visited root-to-leaf steering index sequence.
    """
    if expansion_rng is None:
        expansion_rng = rng
    if mode is None:
        mode = SCALAR if config.objective_count == 1 else PARETO
    if reward_maps.dim != config.objective_count:
        raise ValueError("reward map count must equal objective_count")
    planner = _Planner(reward_maps, motion, workspace)
    pose = tuple(root_pose.as_tuple()) if hasattr(root_pose, "as_tuple") else tuple(root_pose)
    root = planner.make_node(pose, None, None)
    if root.is_terminal:
        return SearchResult([], root, terminal=True)
    c = config.exploration_c
    for _ in range(config.iterations):
        node = root
        path = [root]
        while not node.untried_actions and node.children:
            node = select_child(node, rng, mode, c)
            path.append(node)
        if node.untried_actions:
            node = expand(node, expansion_rng, planner)
            path.append(node)
        node.ended_here += 1
        backpropagate(path, simulate(node, config.rollout_steps, planner))
    actions = best_sequence(root)
    return SearchResult(actions, root, steering=[motion.steering_set[a] for a in actions])


def tree_to_dict(root):
    """Flatten a search tree for JSON export (breadth-first, parent by index)."""
    nodes = []
    queue = [(root, -1)]
    while queue:
        node, parent = queue.pop(0)
        idx = len(nodes)
        nodes.append({
            "pose": [float(v) for v in node.pose],
            "action": node.incoming_action,
            "visits": node.visit_count,
            "mean_reward": node.mean_reward if node.visit_count else None,
            "parent": parent,
        })
        queue.extend((child, idx) for child in node.children)
    return {"nodes": nodes}
