import asyncio
import hashlib
import json
import os
import time

import numpy as np
from starlette.testclient import TestClient

from prosody_rl import gridworld as gw
from prosody_rl import stats, tamer
from prosody_rl.gridworld import ACTIONS
from prosody_rl.service import (
    BASELINE_RECORDING,
    DONE,
    GAME,
    PRACTICE,
    ServiceConfig,
    TeachingSession,
    create_app,
    run_tick_loop,
)

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
GOLDEN_PATH = os.path.join(DATA_DIR, "golden_transcript.json")

BASELINE_STATS = {
    "pitch_mean": 200.0, "pitch_std": 30.0,
    "energy_mean": 0.01, "energy_std": 0.004,
    "loudness_mean": 0.08, "loudness_std": 0.02,
}


def features_dict(pitch=230.0, energy=0.014, loudness=0.10, duration=0.5):
    return {
        "duration": duration, "repetition": 0,
        "pitch_mean": pitch, "pitch_max": pitch * 1.05,
        "energy_mean": energy, "energy_max": energy * 1.2,
        "energy_total": energy * 15,
        "loudness_mean": loudness, "loudness_max": loudness * 1.2,
    }


def fresh_session(**overrides):
    config = ServiceConfig(**{"rng_seed": 5, "map_seed": 1, **overrides})
    session = TeachingSession("t", "tester", config)
    return session


def started_session(**overrides):
    session = fresh_session(**overrides)
    reply = session.finish_baseline(BASELINE_STATS)
    assert reply["type"] == "phase" and reply["phase"] == PRACTICE
    return session


class TestPhaseMachine:
    def test_initial_phase(self):
        assert fresh_session().phase == BASELINE_RECORDING

    def test_utterance_before_baseline_rejected(self):
        session = fresh_session()
        reply = session.ingest_utterance({"word": "yes", "t_start": 0.1, "t_end": 0.4})
        assert reply["type"] == "error"
        assert reply["code"] == "PHASE_VIOLATION"

    def test_tick_before_baseline_rejected(self):
        reply = fresh_session().tick()
        assert reply["code"] == "PHASE_VIOLATION"

    def test_bad_word_rejected(self):
        session = started_session()
        session.tick()
        reply = session.ingest_utterance({"word": "maybe", "t_start": 0.1, "t_end": 0.3})
        assert reply["code"] == "BAD_WORD"

    def test_practice_to_game_on_delivery(self):
        session = started_session(game_episodes=1)
        # steer the agent into a delivery by giving it an oracle H
        solution = gw.value_iteration(session.grid, session.config.reward_spec)
        feat = tamer.RbfFeaturizer(session.grid, center_stride=1)
        session.model = tamer.HModel(feat)
        design = np.stack([feat.transform(s) for s in solution.states()])
        for action in ACTIONS:
            targets = np.array([solution.q[s][action] for s in solution.states()])
            session.model.weights[action], *_ = np.linalg.lstsq(design, targets, rcond=None)
        session.config.epsilon = 0.0
        session.last_feedback_t = 0.0
        phases = [session.phase]
        for k in range(200):
            session.last_feedback_t = session.tick_index * 1.25  # stay greedy
            message = session.tick()
            phases.append(message["phase"])
            if message["phase"] == DONE:
                break
        assert GAME in phases
        assert phases[-1] == DONE


class TestActionRule:
    def test_no_feedback_means_uniform_random(self):
        session = started_session()
        counts = np.zeros(4)
        for _ in range(400):
            message = session.tick()
            counts[_action_of(session)] += 1
        result = stats.chi_square_gof(counts, [counts.sum() / 4] * 4)
        assert result.p_value > 0.01

    def test_oracle_model_follows_optimal_path(self):
        session = started_session(game_episodes=10_000, max_ticks=100_000)
        solution = gw.value_iteration(session.grid, session.config.reward_spec)
        feat = tamer.RbfFeaturizer(session.grid, center_stride=1)
        session.model = tamer.HModel(feat)
        design = np.stack([feat.transform(s) for s in solution.states()])
        for action in ACTIONS:
            targets = np.array([solution.q[s][action] for s in solution.states()])
            session.model.weights[action], *_ = np.linalg.lstsq(design, targets, rcond=None)
        optimal = 0
        total = 0
        for k in range(200):
            state = session.agent
            session.last_feedback_t = session.tick_index * 1.25
            session.tick()
            action = session.data.steps[-1].action
            if state in solution.optimal_actions:
                total += 1
                optimal += action in solution.optimal_actions[state]
        assert total > 150
        assert optimal / total >= 0.9


def _action_of(session):
    return session.data.steps[-1].action


class TestIngestion:
    def test_yes_moves_prediction_positive(self):
        session = started_session()
        message = session.tick()
        step = session.data.steps[-1]
        before = session.model.predict(step.state, step.action)
        reply = session.ingest_utterance({
            "word": "yes", "t_start": step.t + 0.3, "t_end": step.t + 0.8,
            "features": features_dict()})
        assert reply["ok"]
        after = session.model.predict(step.state, step.action)
        assert before == 0.0
        assert after > 0.0

    def test_mid_tick_utterance_credits_only_earlier_steps(self):
        session = started_session()
        session.tick()
        session.tick()
        first, second = session.data.steps
        reply = session.ingest_utterance({
            "word": "no", "t_start": second.t - 0.5, "t_end": second.t - 0.1,
            "features": features_dict()})
        assert reply["credited_steps"] == 1  # only the first step lies before
        assert np.any(session.model.weights[first.action] != 0.0)

    def test_audio_without_baseline_falls_to_word_only(self):
        # keyboard fallback: no features and no PCM -> plain +/-1
        session = started_session()
        session.tick()
        step = session.data.steps[-1]
        reply = session.ingest_utterance({
            "word": "no", "t_start": step.t + 0.2, "t_end": step.t + 0.5})
        assert reply["ok"]
        assert reply["value"] == -1.0

    def test_malformed_pcm_rejected_session_unaffected(self):
        session = started_session()
        session.tick()
        weights_before = session.model.weights.copy()
        reply = session.add_pcm_chunk(b"\x01")  # odd byte count
        assert reply["code"] == "PCM_MALFORMED"
        assert np.array_equal(session.model.weights, weights_before)

    def test_oversize_pcm_rejected(self):
        session = started_session()
        reply = session.add_pcm_chunk(b"\x00" * (64 * 1024 + 2))
        assert reply["code"] == "PCM_TOO_LARGE"

    def test_pcm_utterance_path(self):
        from conftest import sine
        session = started_session()
        session.tick()
        step = session.data.steps[-1]
        tone = (sine(220, 0.5, 0.4) * 32767).astype("<i2").tobytes()
        for offset in range(0, len(tone), 32 * 1024):
            reply = session.add_pcm_chunk(tone[offset:offset + 32 * 1024])
            assert reply.get("ok")
        reply = session.ingest_utterance({
            "word": "yes", "t_start": step.t + 0.3, "t_end": step.t + 0.8})
        assert reply["ok"]
        assert reply["value"] != 1.0  # prosody-weighted, not the fallback


class TestWebsocketProtocol:
    def _client(self, **overrides):
        config = ServiceConfig(**{"rng_seed": 5, "map_seed": 1, **overrides})
        return TestClient(create_app(config, manual_tick=True))

    def test_health(self):
        client = self._client()
        response = client.get("/health")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        assert "sessions" in body

    def test_start_returns_baseline_phase(self):
        client = self._client()
        with client.websocket_connect("/ws") as ws:
            ws.send_text(json.dumps({"type": "start", "participant": "p1"}))
            reply = json.loads(ws.receive_text())
            assert reply["type"] == "phase"
            assert reply["phase"] == BASELINE_RECORDING
            assert "map" in reply

    def test_utterance_during_baseline_violates_phase(self):
        client = self._client()
        with client.websocket_connect("/ws") as ws:
            ws.send_text(json.dumps({"type": "start"}))
            ws.receive_text()
            ws.send_text(json.dumps({"type": "utterance", "word": "yes",
                                     "t_start": 0.0, "t_end": 0.3}))
            reply = json.loads(ws.receive_text())
            assert reply["type"] == "error"
            assert reply["code"] == "PHASE_VIOLATION"

    def test_message_before_start_rejected(self):
        client = self._client()
        with client.websocket_connect("/ws") as ws:
            ws.send_text(json.dumps({"type": "utterance", "word": "yes"}))
            reply = json.loads(ws.receive_text())
            assert reply["code"] == "PHASE_VIOLATION"

    def test_binary_frames_buffer_baseline(self):
        client = self._client()
        with client.websocket_connect("/ws") as ws:
            ws.send_text(json.dumps({"type": "start"}))
            ws.receive_text()
            ws.send_bytes(b"\x00\x00" * 512)
            reply = json.loads(ws.receive_text())
            assert reply["ok"]
            assert reply["buffered"] == 1024


def build_golden_messages():
    """Deterministic scripted client session: baseline, then ticks with a
    fixed yes/no cadence of precomputed-feature utterances."""
    messages = [
        {"type": "start", "participant": "golden"},
        {"type": "baseline_audio", "stats": BASELINE_STATS, "done": True},
    ]
    for k in range(60):
        messages.append({"type": "tick"})
        t = k * 1.25
        if k % 3 == 0:
            word = "yes" if (k // 3) % 4 else "no"
            pitch = 210.0 + 10.0 * ((k * 7) % 5)
            messages.append({
                "type": "utterance", "word": word,
                "t_start": t + 0.3, "t_end": t + 0.8,
                "features": features_dict(pitch=pitch),
            })
    messages.append({"type": "end"})
    return messages


def run_transcript(messages):
    config = ServiceConfig(rng_seed=11, map_seed=2, game_episodes=100,
                           max_ticks=10_000)
    app = create_app(config, manual_tick=True)
    client = TestClient(app)
    final_score = None
    with client.websocket_connect("/ws") as ws:
        for message in messages:
            ws.send_text(json.dumps(message))
            reply = json.loads(ws.receive_text())
            assert reply["type"] != "error", reply
            if reply.get("type") == "state":
                final_score = reply["score"]
    sessions = app.state.sessions
    session = sessions[sorted(sessions)[-1]]
    digest = hashlib.sha256(
        np.ascontiguousarray(session.model.weights).tobytes()).hexdigest()
    return final_score, digest, session


class TestGoldenTranscript:
    def test_replays_to_identical_final_score(self):
        with open(GOLDEN_PATH) as fh:
            golden = json.load(fh)
        score, digest, _ = run_transcript(golden["messages"])
        assert score == golden["final_score"]
        assert digest == golden["weights_sha256"]

    def test_two_runs_identical(self):
        messages = build_golden_messages()
        a = run_transcript(messages)
        b = run_transcript(messages)
        assert a[0] == b[0]
        assert a[1] == b[1]


class TestOnlineOfflineEquivalence:
    def test_scripted_session_matches_offline_training(self):
        _, _, live = run_transcript(build_golden_messages())
        data = live.finalize()
        offline = tamer.train_offline(
            data.timed_steps(), data.events, tamer.PROSODY, data.grid,
            assigner=live.assigner)
        distance = float(np.max(np.abs(offline.weights - live.model.weights)))
        assert distance <= 1e-9

    def test_log_round_trip_preserves_equivalence(self, tmp_path):
        from prosody_rl import session as sio
        _, _, live = run_transcript(build_golden_messages())
        path = tmp_path / "live.jsonl"
        sio.write_session_log(path, live.finalize())
        loaded = sio.read_session_log(path)
        offline = tamer.train_offline(
            loaded.timed_steps(), loaded.events, tamer.PROSODY, loaded.grid,
            assigner=live.assigner)
        distance = float(np.max(np.abs(offline.weights - live.model.weights)))
        assert distance <= 1e-9


class TestTickCadence:
    def test_drift_below_five_percent(self):
        async def run():
            session = started_session(game_episodes=10_000, max_ticks=10_000)
            lock = asyncio.Lock()
            ticks = []

            async def broadcast(message):
                ticks.append(time.perf_counter())

            period = 0.03
            task = asyncio.create_task(
                run_tick_loop(session, broadcast, lock, period=period))
            start = time.perf_counter()
            while len(ticks) < 100:
                await asyncio.sleep(0.005)
            task.cancel()
            elapsed = ticks[99] - start
            expected = 100 * period
            assert abs(elapsed - expected) / expected < 0.05, elapsed

        asyncio.run(run())
