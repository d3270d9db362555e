from collections import deque

import numpy as np
import pytest

from prosody_rl import gridworld as gw
from prosody_rl.errors import FormatVersionError, InfeasibleMap, InvalidParams, StateNotFound
from prosody_rl.gridworld import (
    ACTIONS,
    DOWN,
    RIGHT,
    UP,
    AgentState,
    GridMap,
    RewardSpec,
    advantage,
    check_map,
    generate_map,
    greedy_rollout,
    normalized_performance,
    optimal_step_count,
    solution_to_csv,
    state_features,
    step,
    value_iteration,
)


def bfs_shortest_steps(grid: GridMap) -> int | None:
    """Independent oracle: BFS over (cell, has_nut) avoiding bombs."""
    start = (grid.start, False)
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        (cell, has_nut), dist = frontier.popleft()
        for dr, dc in gw.DELTAS:
            target = (cell[0] + dr, cell[1] + dc)
            if grid.is_wall(target) or target in grid.bombs:
                continue
            nut = has_nut or target == grid.nut
            if target == grid.squirrel and nut:
                return dist + 1
            state = (target, nut)
            if state not in seen:
                seen.add(state)
                frontier.append((state, dist + 1))
    return None


def corridor_map():
    """3x7 grid: one open row, squirrel at the right end, no bombs."""
    walls = frozenset(
        (r, c) for r in range(3) for c in range(7)
        if r in (0, 2) or c in (0, 6)
    )
    return GridMap(rows=3, cols=7, walls=walls, nut=(1, 2), squirrel=(1, 5),
                   bombs=frozenset(), start=(1, 1), start_direction=RIGHT)


class TestGeneration:
    def test_seed_determinism(self):
        assert generate_map(12, 12, 42) == generate_map(12, 12, 42)

    def test_generated_maps_satisfy_invariants(self):
        for seed in range(1000):
            grid = generate_map(12, 12, seed)
            assert check_map(grid) == [], seed

    def test_small_interior(self):
        # 7x7 total = 5x5 interior: either infeasible or invariant-clean
        try:
            grid = generate_map(7, 7, 3)
        except InfeasibleMap:
            return
        assert check_map(grid) == []

    def test_checker_flags_bad_maps(self):
        grid = generate_map(12, 12, 0)
        squeezed = GridMap(rows=grid.rows, cols=grid.cols, walls=grid.walls,
                           nut=grid.squirrel, squirrel=grid.squirrel,
                           bombs=grid.bombs, start=grid.start,
                           start_direction=grid.start_direction)
        assert check_map(squeezed)


class TestStep:
    def test_wall_blocks(self):
        grid = corridor_map()
        state = AgentState(1, 1, False)
        nxt, reward, terminal = step(grid, state, UP)
        assert nxt == state
        assert reward == RewardSpec().step_cost
        assert not terminal

    def test_bomb_is_terminal(self, grid12):
        bomb = sorted(grid12.bombs)[0]
        for action, (dr, dc) in zip(ACTIONS, gw.DELTAS):
            origin = (bomb[0] - dr, bomb[1] - dc)
            if not grid12.is_wall(origin) and origin not in grid12.bombs:
                nxt, reward, terminal = step(grid12, AgentState(*origin, False), action)
                assert terminal
                assert reward == RewardSpec().step_cost + RewardSpec().bomb
                return
        pytest.fail("no approachable bomb")

    def test_squirrel_without_nut_is_ordinary(self):
        grid = corridor_map()
        nxt, reward, terminal = step(grid, AgentState(1, 4, False), RIGHT)
        assert (nxt.row, nxt.col) == grid.squirrel
        assert not terminal
        assert reward == RewardSpec().step_cost

    def test_nut_pickup_sets_flag(self):
        grid = corridor_map()
        nxt, reward, terminal = step(grid, AgentState(1, 1, False), RIGHT)
        assert nxt.has_nut and not terminal

    def test_total_and_deterministic(self, grid12):
        sol_states = gw.enumerate_states(grid12)
        for state in sol_states[:40]:
            for action in ACTIONS:
                a = step(grid12, state, action)
                b = step(grid12, state, action)
                assert a == b


class TestValueIteration:
    def test_corridor_matches_hand_rolled(self):
        grid = corridor_map()
        spec = RewardSpec()
        sol = value_iteration(grid, spec)
        # walk the with-nut chain backwards from the squirrel
        expected = {}  # V at columns 4,3,2,1 with the nut held
        v = spec.step_cost + spec.delivery          # entering from column 4
        expected[4] = v
        for col in (3, 2, 1):
            v = spec.step_cost + spec.discount * v
            expected[col] = v
        for col, v_expected in expected.items():
            q = sol.q[AgentState(1, col, True)][RIGHT]
            assert q == pytest.approx(v_expected, abs=1e-8), col

    def test_terminal_one_step_q(self, grid12, solution12):
        spec = solution12.spec
        bomb = sorted(grid12.bombs)[0]
        for action, (dr, dc) in zip(ACTIONS, gw.DELTAS):
            origin = AgentState(bomb[0] - dr, bomb[1] - dc, False)
            if origin in solution12.q:
                assert solution12.q[origin][action] == pytest.approx(
                    spec.step_cost + spec.bomb, abs=1e-8)
                return
        pytest.fail("no solvable state adjacent to a bomb")

    def test_tolerance_insensitivity(self, grid12):
        a = value_iteration(grid12, tol=1e-8)
        b = value_iteration(grid12, tol=1e-10)
        assert a.optimal_actions == b.optimal_actions

    def test_invalid_tol(self, grid12):
        with pytest.raises(InvalidParams):
            value_iteration(grid12, tol=0.0)

    def test_reward_scaling_preserves_argmax(self, grid12):
        base = value_iteration(grid12, RewardSpec())
        scaled = value_iteration(grid12, RewardSpec(
            step_cost=-2.0, bomb=-100.0, delivery=100.0, nut_pickup=0.0))
        assert base.optimal_actions == scaled.optimal_actions


class TestAdvantage:
    def test_optimal_actions_have_zero_advantage(self, solution12):
        for state in solution12.states():
            for action in solution12.optimal_actions[state]:
                assert advantage(solution12, state, action) == pytest.approx(0.0, abs=1e-6)

    def test_non_optimal_strictly_negative(self, solution12):
        for state in solution12.states():
            for action in ACTIONS:
                if action not in solution12.optimal_actions[state]:
                    assert advantage(solution12, state, action) < 0

    def test_uniform_q_state(self):
        # squirrel walled off: the agent can only wander, every action equal
        walls = set(
            (r, c) for r in range(5) for c in range(5)
            if r in (0, 4) or c in (0, 4)
        ) | {(1, 2), (2, 1)}
        grid = GridMap(rows=5, cols=5, walls=frozenset(walls), nut=(3, 3),
                       squirrel=(1, 1), bombs=frozenset(), start=(2, 2),
                       start_direction=DOWN)
        sol = value_iteration(grid)
        for state in sol.states():
            for action in ACTIONS:
                assert advantage(sol, state, action) == pytest.approx(0.0, abs=1e-6)

    def test_unknown_state(self, solution12):
        with pytest.raises(StateNotFound):
            advantage(solution12, AgentState(0, 0, False), UP)


class TestPerformance:
    def test_bfs_oracle_matches_greedy_rollout(self):
        for seed in range(25):
            grid = generate_map(12, 12, seed)
            sol = value_iteration(grid)
            assert optimal_step_count(sol) == bfs_shortest_steps(grid), seed

    def test_normalized_values(self, grid12, solution12):
        optimal = optimal_step_count(solution12)
        assert normalized_performance(optimal, grid12, solution12) == 1.0
        assert normalized_performance(2 * optimal, grid12, solution12) == 2.0

    def test_steps_must_be_positive(self, grid12, solution12):
        with pytest.raises(InvalidParams):
            normalized_performance(0, grid12, solution12)

    def test_unreachable_goal(self):
        walls = set(
            (r, c) for r in range(5) for c in range(5)
            if r in (0, 4) or c in (0, 4)
        ) | {(1, 2), (2, 1)}
        grid = GridMap(rows=5, cols=5, walls=frozenset(walls), nut=(3, 3),
                       squirrel=(1, 1), bombs=frozenset(), start=(2, 2),
                       start_direction=DOWN)
        sol = value_iteration(grid)
        with pytest.raises(InfeasibleMap):
            greedy_rollout(sol)


class TestSerialization:
    def test_json_round_trip(self, grid12):
        assert GridMap.from_json(grid12.to_json()) == grid12

    def test_version_rejected(self, grid12):
        import json
        d = json.loads(grid12.to_json())
        d["version"] = "9.0"
        with pytest.raises(FormatVersionError):
            GridMap.from_json(json.dumps(d))

    def test_csv_export(self, tmp_path, solution12):
        path = tmp_path / "solution.csv"
        solution_to_csv(solution12, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# format: solution-csv")
        assert lines[1] == "row,col,has_nut,action,q,advantage"
        assert len(lines) == 2 + 4 * len(solution12.states())

    def test_state_features_shape(self, grid12):
        feats = state_features(grid12, AgentState(2, 3, True))
        assert feats.shape == (6,)
        assert feats[2] == 1.0
        assert np.all(feats >= 0)
