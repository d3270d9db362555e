"""Nut-delivery grid world with exact dynamic-programming solutions.

The agent picks up a nut and delivers it to a squirrel while avoiding
three bombs on a walled grid. States are (row, col, has_nut); actions are
up/down/left/right with deterministic transitions. Value iteration yields
Q, V and the advantage table used as the task-statistics oracle.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatVersionError, InfeasibleMap, InvalidParams, StateNotFound

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTIONS = (UP, DOWN, LEFT, RIGHT)
ACTION_NAMES = ("up", "down", "left", "right")
DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))

MAP_FORMAT_VERSION = "1.0"
MIN_ELEMENT_DISTANCE = 4
START_RAY_LENGTH = 3
GENERATION_ATTEMPTS = 10_000

Cell = tuple[int, int]


@dataclass(frozen=True)
class AgentState:
    row: int
    col: int
    has_nut: bool = False


@dataclass(frozen=True)
class RewardSpec:
    step_cost: float = -1.0
    bomb: float = -50.0
    delivery: float = 50.0
    nut_pickup: float = 0.0
    discount: float = 0.95

    def __post_init__(self):
        if self.step_cost >= 0:
            raise InvalidParams("step_cost must be negative")
        if not (0.0 < self.discount < 1.0):
            raise InvalidParams("discount must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "RewardSpec":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class GridMap:
    rows: int
    cols: int
    walls: frozenset[Cell]
    nut: Cell
    squirrel: Cell
    bombs: frozenset[Cell]
    start: Cell
    start_direction: int

    def is_wall(self, cell: Cell) -> bool:
        return cell in self.walls

    def interior_cells(self) -> list[Cell]:
        return [
            (r, c)
            for r in range(self.rows)
            for c in range(self.cols)
            if (r, c) not in self.walls
        ]

    def to_json(self) -> str:
        return json.dumps({
            "format": "gridmap",
            "version": MAP_FORMAT_VERSION,
            "rows": self.rows,
            "cols": self.cols,
            "walls": sorted(self.walls),
            "nut": list(self.nut),
            "squirrel": list(self.squirrel),
            "bombs": sorted(self.bombs),
            "start": list(self.start),
            "start_direction": ACTION_NAMES[self.start_direction],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GridMap":
        d = json.loads(text)
        _check_version(d, "gridmap")
        return cls(
            rows=int(d["rows"]),
            cols=int(d["cols"]),
            walls=frozenset(tuple(w) for w in d["walls"]),
            nut=tuple(d["nut"]),
            squirrel=tuple(d["squirrel"]),
            bombs=frozenset(tuple(b) for b in d["bombs"]),
            start=tuple(d["start"]),
            start_direction=ACTION_NAMES.index(d["start_direction"]),
        )


def _check_version(d: dict, expected_format: str) -> None:
    if d.get("format") != expected_format:
        raise FormatVersionError(f"expected format {expected_format!r}, got {d.get('format')!r}")
    major = str(d.get("version", "")).split(".")[0]
    if major != MAP_FORMAT_VERSION.split(".")[0]:
        raise FormatVersionError(f"unsupported major version {d.get('version')!r}")


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def start_ray(grid: GridMap, length: int = START_RAY_LENGTH) -> list[Cell]:
    """The first `length` cells stepped onto along the start direction."""
    dr, dc = DELTAS[grid.start_direction]
    return [(grid.start[0] + k * dr, grid.start[1] + k * dc) for k in range(1, length + 1)]


def check_map(grid: GridMap) -> list[str]:
    """Return a list of invariant violations; empty means the map is valid."""
    problems = []
    border = {
        (r, c)
        for r in range(grid.rows)
        for c in range(grid.cols)
        if r in (0, grid.rows - 1) or c in (0, grid.cols - 1)
    }
    if not border <= grid.walls:
        problems.append("border cells must all be walls")
    elements = [grid.nut, grid.squirrel, *sorted(grid.bombs)]
    if len(grid.bombs) != 3:
        problems.append(f"expected 3 bombs, got {len(grid.bombs)}")
    special = elements + [grid.start]
    if len(set(special)) != len(special):
        problems.append("nut, squirrel, bombs and start must be pairwise distinct")
    for cell in special:
        if grid.is_wall(cell):
            problems.append(f"special cell {cell} sits on a wall")
    for i, a in enumerate(elements):
        for b in elements[i + 1:]:
            if manhattan(a, b) < MIN_ELEMENT_DISTANCE:
                problems.append(f"elements {a} and {b} closer than {MIN_ELEMENT_DISTANCE}")
    ray = start_ray(grid)
    if any(grid.is_wall(cell) for cell in ray):
        problems.append("start cannot move 3 cells along its direction")
    for bomb in sorted(grid.bombs):
        for cell in ray:
            if manhattan(bomb, cell) < MIN_ELEMENT_DISTANCE:
                problems.append(f"bomb {bomb} within {MIN_ELEMENT_DISTANCE} of start ray cell {cell}")
    return problems


def generate_map(rows: int = 12, cols: int = 12, rng_seed: int = 0) -> GridMap:
    """Rejection-sample a map satisfying every invariant; deterministic in seed."""
    rng = np.random.default_rng(rng_seed)
    border = frozenset(
        (r, c)
        for r in range(rows)
        for c in range(cols)
        if r in (0, rows - 1) or c in (0, cols - 1)
    )
    interior = [(r, c) for r in range(1, rows - 1) for c in range(1, cols - 1)]
    if not interior:
        raise InfeasibleMap(f"no interior cells in a {rows}x{cols} grid")

    for _ in range(GENERATION_ATTEMPTS):
        start = interior[rng.integers(len(interior))]
        direction = int(rng.integers(4))
        idx = rng.choice(len(interior), size=5, replace=False)
        nut, squirrel, *bombs = [interior[i] for i in idx]
        candidate = GridMap(
            rows=rows, cols=cols, walls=border,
            nut=nut, squirrel=squirrel, bombs=frozenset(bombs),
            start=start, start_direction=direction,
        )
        if not check_map(candidate):
            return candidate
    raise InfeasibleMap(
        f"no valid placement after {GENERATION_ATTEMPTS} attempts on {rows}x{cols}"
    )


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def step(grid: GridMap, state: AgentState, action: int,
         spec: RewardSpec = RewardSpec()) -> tuple[AgentState, float, bool]:
    """Deterministic one-cell move; wall targets leave the agent in place."""
    dr, dc = DELTAS[action]
    target = (state.row + dr, state.col + dc)
    if grid.is_wall(target):
        return AgentState(state.row, state.col, state.has_nut), spec.step_cost, False

    reward = spec.step_cost
    has_nut = state.has_nut
    terminal = False
    if target in grid.bombs:
        reward += spec.bomb
        terminal = True
    elif target == grid.nut and not has_nut:
        has_nut = True
        reward += spec.nut_pickup
    elif target == grid.squirrel and has_nut:
        reward += spec.delivery
        terminal = True
    return AgentState(target[0], target[1], has_nut), reward, terminal


@dataclass(frozen=True)
class MdpSolution:
    """Exact Q/V/advantage tables over the non-terminal states."""

    grid: GridMap
    spec: RewardSpec
    q: dict[AgentState, np.ndarray]
    v: dict[AgentState, float]
    optimal_actions: dict[AgentState, tuple[int, ...]]
    # argmax ties within this tolerance count as co-optimal
    tie_tol: float = 1e-6

    def states(self) -> list[AgentState]:
        return list(self.q.keys())

    def advantage(self, state: AgentState, action: int) -> float:
        if state not in self.q:
            raise StateNotFound(f"{state} is not a solved non-terminal state")
        return float(self.q[state][action] - self.v[state])


def enumerate_states(grid: GridMap) -> list[AgentState]:
    """Non-terminal states: skip bomb cells, the delivered squirrel state,
    and the contradictory (nut cell, has_nut=False) state."""
    states = []
    for cell in grid.interior_cells():
        for has_nut in (False, True):
            if cell in grid.bombs:
                continue
            if cell == grid.squirrel and has_nut:
                continue
            if cell == grid.nut and not has_nut:
                continue
            states.append(AgentState(cell[0], cell[1], has_nut))
    return states


def value_iteration(grid: GridMap, spec: RewardSpec = RewardSpec(),
                    tol: float = 1e-10) -> MdpSolution:
    """Bellman-optimality iteration until the max update drops below tol."""
    if tol <= 0:
        raise InvalidParams("tol must be positive")
    states = enumerate_states(grid)
    index = {s: i for i, s in enumerate(states)}
    n = len(states)

    succ = np.zeros((n, 4), dtype=np.int64)
    rew = np.zeros((n, 4))
    term = np.zeros((n, 4), dtype=bool)
    for i, s in enumerate(states):
        for a in ACTIONS:
            s2, r, t = step(grid, s, a, spec)
            succ[i, a] = index.get(s2, 0)  # terminal successors bootstrap V=0
            rew[i, a] = r
            term[i, a] = t

    v = np.zeros(n)
    while True:
        q = rew + spec.discount * np.where(term, 0.0, v[succ])
        v_new = q.max(axis=1)
        delta = float(np.max(np.abs(v_new - v))) if n else 0.0
        v = v_new
        if delta < tol:
            break

    q = rew + spec.discount * np.where(term, 0.0, v[succ])
    tie_tol = 1e-6
    q_map, v_map, opt = {}, {}, {}
    for i, s in enumerate(states):
        q_map[s] = q[i].copy()
        v_map[s] = float(v[i])
        opt[s] = tuple(a for a in ACTIONS if q[i, a] >= v[i] - tie_tol)
    return MdpSolution(grid=grid, spec=spec, q=q_map, v=v_map,
                       optimal_actions=opt, tie_tol=tie_tol)


def advantage(solution: MdpSolution, state: AgentState, action: int) -> float:
    """A(s, a) = Q(s, a) - V(s); non-positive, zero exactly on optimal actions."""
    return solution.advantage(state, action)


def greedy_rollout(solution: MdpSolution, start: AgentState | None = None,
                   max_steps: int | None = None) -> list[AgentState]:
    """Follow the first optimal action from each state until terminal."""
    grid = solution.grid
    state = start or AgentState(grid.start[0], grid.start[1], False)
    cap = max_steps or 4 * (grid.rows * grid.cols * 2)
    trail = [state]
    for _ in range(cap):
        if state not in solution.optimal_actions:
            raise StateNotFound(f"rollout reached unsolved state {state}")
        action = solution.optimal_actions[state][0]
        state, _, terminal = step(grid, state, action, solution.spec)
        trail.append(state)
        if terminal:
            return trail
    raise InfeasibleMap("greedy rollout never reaches the goal")


def optimal_step_count(solution: MdpSolution) -> int:
    """Length of the greedy start->nut->squirrel rollout."""
    return len(greedy_rollout(solution)) - 1


def normalized_performance(steps_taken: int, grid: GridMap,
                           solution: MdpSolution) -> float:
    """Steps actually taken divided by the optimal step count for this map."""
    if steps_taken < 1:
        raise InvalidParams("steps_taken must be >= 1")
    return steps_taken / optimal_step_count(solution)


def state_features(grid: GridMap, state: AgentState) -> np.ndarray:
    """Desk-scale feature vector: normalized position, nut flag, and
    Manhattan distances to nut, squirrel and the nearest bomb."""
    scale = grid.rows + grid.cols
    cell = (state.row, state.col)
    return np.array([
        state.row / (grid.rows - 1),
        state.col / (grid.cols - 1),
        1.0 if state.has_nut else 0.0,
        manhattan(cell, grid.nut) / scale,
        manhattan(cell, grid.squirrel) / scale,
        min(manhattan(cell, b) for b in grid.bombs) / scale if grid.bombs else 0.0,
    ])


def solution_to_csv(solution: MdpSolution, path) -> None:
    """state,action,Q,advantage rows with a versioned comment header."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# format: solution-csv v{MAP_FORMAT_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "has_nut", "action", "q", "advantage"])
        for s in sorted(solution.q, key=lambda s: (s.row, s.col, s.has_nut)):
            for a in ACTIONS:
                writer.writerow([
                    s.row, s.col, int(s.has_nut), ACTION_NAMES[a],
                    f"{solution.q[s][a]:.10f}",
                    f"{solution.advantage(s, a):.10f}",
                ])
