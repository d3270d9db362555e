"""Live teaching service: grid world on a fixed tick, fed by teacher voice.

The session core is a synchronous state machine driven by explicit
timestamps, so the protocol and the learner are fully testable without a
network. The FastAPI layer adds the websocket transport: JSON text frames
for control messages, binary frames for raw PCM chunks, one session per
connection, one lock per session so learner updates and ticks are
totally ordered.
"""

from __future__ import annotations

import asyncio
import json
import os
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import audio as au
from .audio import NO, YES, AudioBuffer, SpeakerBaseline, UtteranceRecord
from .errors import NoBaseline, ProsodyRlError
from .gridworld import AgentState, GridMap, RewardSpec, generate_map, step
from .session import DEFAULT_TICK_S, SessionData, StepRow, write_session_log
from .tamer import (
    PROSODY,
    CreditAssigner,
    FeedbackEvent,
    HModel,
    RbfFeaturizer,
    apply_feedback,
)

BASELINE_RECORDING = "BASELINE_RECORDING"
PRACTICE = "PRACTICE"
GAME = "GAME"
DONE = "DONE"

MAX_PCM_FRAME_BYTES = 64 * 1024
PCM_SAMPLE_RATE = 22050
EXPLORE_EPSILON = 0.1


@dataclass
class ServiceConfig:
    rows: int = 12
    cols: int = 12
    map_seed: int = 0
    tick_seconds: float = DEFAULT_TICK_S
    reward_spec: RewardSpec = field(default_factory=RewardSpec)
    practice_episodes: int = 1
    game_episodes: int = 3
    max_ticks: int = 2000
    epsilon: float = EXPLORE_EPSILON
    rng_seed: int = 0
    log_dir: str | None = None
    debug_h: bool = False  # include per-action H predictions in state messages


class TeachingSession:
    """One teacher, one learner, one grid world.

    Phases: BASELINE_RECORDING (read the calibration paragraph) ->
    PRACTICE (one delivery) -> GAME (fixed number of episodes) -> DONE.
    The action rule mirrors the data-collection convention: without
    feedback for at least one tick the agent explores uniformly at
    random, otherwise it acts epsilon-greedily on the current H.
    """

    def __init__(self, session_id: str, participant: str,
                 config: ServiceConfig | None = None,
                 grid: GridMap | None = None):
        self.config = config or ServiceConfig()
        self.session_id = session_id
        self.grid = grid or generate_map(self.config.rows, self.config.cols,
                                         self.config.map_seed)
        self.rng = np.random.default_rng(self.config.rng_seed)
        self.model = HModel(RbfFeaturizer(self.grid))
        self.assigner = CreditAssigner(default_gap=self.config.tick_seconds)
        self.phase = BASELINE_RECORDING
        self.tick_index = 0
        self.score = 0.0
        self.episodes_done = 0
        self.last_feedback_t: float | None = None
        self.agent = AgentState(self.grid.start[0], self.grid.start[1], False)
        self.baseline: SpeakerBaseline | None = None
        self._baseline_pcm = bytearray()
        self._utterance_pcm = bytearray()
        self.data = SessionData(
            grid=self.grid, reward_spec=self.config.reward_spec,
            tick_seconds=self.config.tick_seconds, participant=participant,
            variant=PROSODY,
        )

    # -- audio ingestion ----------------------------------------------------

    def add_pcm_chunk(self, chunk: bytes) -> dict:
        if len(chunk) > MAX_PCM_FRAME_BYTES:
            return self._error("PCM_TOO_LARGE",
                               f"binary frames are capped at {MAX_PCM_FRAME_BYTES} bytes")
        if len(chunk) % 2 != 0:
            return self._error("PCM_MALFORMED", "16-bit PCM requires an even byte count")
        target = self._baseline_pcm if self.phase == BASELINE_RECORDING else self._utterance_pcm
        target.extend(chunk)
        return {"type": "ack", "ok": True, "buffered": len(target)}

    def _pcm_to_buffer(self, raw: bytes) -> AudioBuffer:
        samples = np.frombuffer(bytes(raw), dtype="<i2").astype(np.float64) / 32768.0
        return AudioBuffer(samples, PCM_SAMPLE_RATE)

    def finish_baseline(self, stats: dict | None = None) -> dict:
        if self.phase != BASELINE_RECORDING:
            return self._phase_violation("baseline_audio")
        try:
            if stats is not None:
                self.baseline = SpeakerBaseline.from_dict(stats)
            else:
                if not self._baseline_pcm:
                    return self._error("NO_AUDIO", "no baseline PCM received")
                self.baseline = SpeakerBaseline.from_audio(
                    self._pcm_to_buffer(self._baseline_pcm))
        except ProsodyRlError as exc:
            return self._error("BAD_BASELINE", str(exc))
        self.data.baseline = self.baseline
        self._baseline_pcm.clear()
        self.phase = PRACTICE
        return {"type": "phase", "phase": self.phase}

    # -- protocol -----------------------------------------------------------

    def handle_message(self, message: dict) -> dict:
        kind = message.get("type")
        if kind == "baseline_audio":
            if message.get("done"):
                return self.finish_baseline(message.get("stats"))
            return {"type": "ack", "ok": True}
        if kind == "utterance":
            return self.ingest_utterance(message)
        if kind == "end":
            self.phase = DONE
            return {"type": "phase", "phase": self.phase}
        return self._error("UNKNOWN_TYPE", f"unknown message type {kind!r}")

    def ingest_utterance(self, message: dict) -> dict:
        """Compute the signed feedback value for one utterance and update H.

        Credits the steps strictly before the utterance's start time.
        Accepts raw PCM (accumulated binary frames), precomputed features,
        or a bare word (which falls back to plain +/-1 feedback).
        """
        if self.phase not in (PRACTICE, GAME):
            self._utterance_pcm.clear()
            return self._phase_violation("utterance")
        word = str(message.get("word", "")).lower()
        if word not in (YES, NO):
            self._utterance_pcm.clear()
            return self._error("BAD_WORD", "word must be 'yes' or 'no'")
        try:
            t_start = float(message["t_start"])
            t_end = float(message["t_end"])
        except (KeyError, TypeError, ValueError):
            self._utterance_pcm.clear()
            return self._error("BAD_TIMESTAMPS", "utterance needs numeric t_start/t_end")

        features = None
        try:
            if message.get("features"):
                features = au.ProsodyFeatures.from_dict(message["features"])
            elif self._utterance_pcm:
                buffer = self._pcm_to_buffer(self._utterance_pcm)
                if len(buffer.samples) < au.HOP_LENGTH:
                    return self._error("PCM_MALFORMED", "utterance audio too short")
                features = au.extract_features(buffer, 0.0, buffer.duration)
        except ProsodyRlError as exc:
            return self._error("BAD_AUDIO", str(exc))
        finally:
            self._utterance_pcm.clear()

        if features is not None:
            if self.baseline is None:
                raise NoBaseline("audio feedback requires a recorded baseline")
            value = au.signed_feedback_value(features, word, self.baseline)
        else:
            # keyboard-only fallback: plain binary feedback
            value = 1.0 if word == YES else -1.0
            features = au.ProsodyFeatures(
                duration=max(t_end - t_start, 1e-3), repetition=0,
                pitch_mean=0.0, pitch_max=0.0, energy_mean=0.0,
                energy_max=0.0, energy_total=0.0,
                loudness_mean=0.0, loudness_max=0.0)

        event = FeedbackEvent(t_start, value)
        recent = [s.timed() for s in self.data.steps if s.t < t_start]
        credited = apply_feedback(self.model, self.assigner, recent, event)
        self.data.utterances.append(UtteranceRecord(word, t_start, max(t_end, t_start + 1e-3),
                                                    features))
        self.data.events.append(event)
        self.last_feedback_t = t_start
        return {"type": "ack", "ok": True, "value": value, "credited_steps": credited}

    # -- dynamics -----------------------------------------------------------

    def choose_action(self, now: float) -> int:
        recent_feedback = (self.last_feedback_t is not None
                           and now - self.last_feedback_t < self.config.tick_seconds)
        if not recent_feedback:
            return int(self.rng.integers(4))
        if self.rng.random() < self.config.epsilon:
            return int(self.rng.integers(4))
        return int(np.argmax(self.model.predict_all(self.agent)))

    def tick(self, now: float | None = None) -> dict:
        if self.phase not in (PRACTICE, GAME):
            return self._phase_violation("tick")
        t = self.tick_index * self.config.tick_seconds if now is None else now
        action = self.choose_action(t)
        next_state, reward, terminal = step(self.grid, self.agent, action,
                                            self.config.reward_spec)
        self.data.steps.append(StepRow(t, self.agent, action, reward, terminal))
        self.score += reward
        self.tick_index += 1
        self.agent = next_state
        message = {
            "type": "state", "tick": self.tick_index, "t": t,
            "phase": self.phase,
            "agent": {"row": next_state.row, "col": next_state.col,
                      "has_nut": bool(next_state.has_nut)},
            "score": self.score, "terminal": terminal,
        }
        if self.config.debug_h and not terminal:
            message["h_values"] = [round(v, 4) for v in
                                   self.model.predict_all(next_state).tolist()]
        if terminal:
            self._on_terminal(reward)
            message["phase"] = self.phase
        if self.tick_index >= self.config.max_ticks:
            self.phase = DONE
            message["phase"] = self.phase
        return message

    def _on_terminal(self, reward: float) -> None:
        self.agent = AgentState(self.grid.start[0], self.grid.start[1], False)
        if self.phase == PRACTICE:
            if reward > 0:  # practice runs until the first delivery
                self.phase = GAME
        else:
            self.episodes_done += 1
            if self.episodes_done >= self.config.game_episodes:
                self.phase = DONE

    # -- bookkeeping ----------------------------------------------------

    def finalize(self) -> SessionData:
        self.data.score = self.score
        episodes = self.data.episode_lengths()
        self.data.outcome = episodes[-1][1] if episodes else "incomplete"
        return self.data

    def write_log(self) -> str | None:
        if not self.config.log_dir:
            return None
        os.makedirs(self.config.log_dir, exist_ok=True)
        path = os.path.join(self.config.log_dir, f"session-{self.session_id}.jsonl")
        write_session_log(path, self.finalize())
        return path

    def state_snapshot(self) -> dict:
        return {
            "type": "state", "tick": self.tick_index, "phase": self.phase,
            "agent": {"row": self.agent.row, "col": self.agent.col,
                      "has_nut": bool(self.agent.has_nut)},
            "score": self.score, "terminal": False,
        }

    def _phase_violation(self, what: str) -> dict:
        return self._error("PHASE_VIOLATION",
                           f"{what!r} is not allowed during {self.phase}")

    def _error(self, code: str, detail: str) -> dict:
        return {"type": "error", "code": code, "detail": detail}


async def run_tick_loop(session: TeachingSession, broadcast, lock: asyncio.Lock,
                        period: float | None = None,
                        clock=None) -> None:
    """Drive a session at a fixed cadence with absolute deadlines.

    Deadlines accumulate from the start time rather than from each wake-up,
    so per-tick jitter does not drift the cadence.
    """
    loop = asyncio.get_running_loop()
    now = clock or loop.time
    period = period or session.config.tick_seconds
    next_deadline = now() + period
    while session.phase in (PRACTICE, GAME):
        delay = next_deadline - now()
        if delay > 0:
            await asyncio.sleep(delay)
        next_deadline += period
        async with lock:
            if session.phase not in (PRACTICE, GAME):
                break
            message = session.tick()
        await broadcast(message)
    if session.phase == DONE:
        session.write_log()


def create_app(config: ServiceConfig | None = None, manual_tick: bool = False):
    """FastAPI app exposing /health, /ws, and the static teach console.

    manual_tick replaces the real-time tick task with a client-driven
    {"type": "tick"} message, which makes scripted protocol sessions
    deterministic for tests.
    """
    config = config or ServiceConfig()
    app = FastAPI(title="prosody-rl live teaching service")
    sessions: dict[str, TeachingSession] = {}
    app.state.sessions = sessions
    counter = {"next": 0}

    @app.get("/health")
    async def health():
        return {"status": "ok", "sessions": len(sessions)}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        session: TeachingSession | None = None
        lock = asyncio.Lock()
        tick_task: asyncio.Task | None = None

        async def broadcast(message: dict):
            try:
                await ws.send_text(json.dumps(message, sort_keys=True))
            except RuntimeError:
                pass

        try:
            while True:
                frame = await ws.receive()
                if frame.get("type") == "websocket.disconnect":
                    break
                if frame.get("bytes") is not None:
                    if session is None:
                        await broadcast({"type": "error", "code": "PHASE_VIOLATION",
                                         "detail": "send 'start' first"})
                        continue
                    async with lock:
                        reply = session.add_pcm_chunk(frame["bytes"])
                    await broadcast(reply)
                    continue
                try:
                    message = json.loads(frame.get("text") or "")
                except json.JSONDecodeError:
                    await broadcast({"type": "error", "code": "BAD_JSON",
                                     "detail": "frames must be JSON objects"})
                    continue

                kind = message.get("type")
                if kind == "start":
                    if session is not None:
                        await broadcast({"type": "error", "code": "PHASE_VIOLATION",
                                         "detail": "session already started"})
                        continue
                    counter["next"] += 1
                    session_id = f"{counter['next']:04d}"
                    session = TeachingSession(
                        session_id, str(message.get("participant", "anonymous")),
                        config)
                    sessions[session_id] = session
                    await broadcast({"type": "phase", "phase": session.phase,
                                     "session_id": session_id,
                                     "map": json.loads(session.grid.to_json()),
                                     "tick_seconds": session.config.tick_seconds})
                    continue
                if session is None:
                    await broadcast({"type": "error", "code": "PHASE_VIOLATION",
                                     "detail": "send 'start' first"})
                    continue
                if kind == "tick" and manual_tick:
                    async with lock:
                        reply = session.tick()
                    await broadcast(reply)
                    if session.phase == DONE:
                        session.write_log()
                    continue
                async with lock:
                    was_recording = session.phase == BASELINE_RECORDING
                    reply = session.handle_message(message)
                await broadcast(reply)
                if (was_recording and session.phase == PRACTICE
                        and not manual_tick and tick_task is None):
                    tick_task = asyncio.create_task(
                        run_tick_loop(session, broadcast, lock))
                if session.phase == DONE:
                    session.write_log()
                    if kind == "end":
                        break
        except WebSocketDisconnect:
            pass
        finally:
            if tick_task is not None:
                tick_task.cancel()
            if session is not None:
                session.finalize()

    static_dir = os.environ.get(
        "PROSODY_RL_STATIC",
        os.path.join(os.path.dirname(__file__), "..", "..", "frontend", "dist"),
    )
    if os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")
    return app


def serve(config: ServiceConfig | None = None, host: str = "127.0.0.1",
          port: int = 8008) -> None:
    import uvicorn

    level = os.environ.get("PROSODY_RL_LOG_LEVEL", "info").lower()
    uvicorn.run(create_app(config), host=host, port=port, log_level=level)
