"""Durable session formats and the replay tool.

A session log is JSONL: one header row, time-ordered step / utterance /
feedback rows, and one footer row. The same canonical JSON writer is used
everywhere so reading a log and re-serializing it is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .audio import ProsodyFeatures, SpeakerBaseline, UtteranceRecord
from .errors import FormatVersionError, InvalidSession, ReplayError
from .gridworld import ACTION_NAMES, AgentState, GridMap, RewardSpec
from .tamer import FeedbackEvent, TimedStep

LOG_FORMAT_VERSION = "1.0"
DEFAULT_TICK_S = 1.25


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class StepRow:
    t: float
    state: AgentState
    action: int
    reward: float
    terminal: bool

    def timed(self) -> TimedStep:
        return TimedStep(self.t, self.state, self.action)


@dataclass
class SessionData:
    """In-memory session: environment header, event streams, outcome."""

    grid: GridMap
    reward_spec: RewardSpec
    tick_seconds: float = DEFAULT_TICK_S
    participant: str = "anonymous"
    variant: str = "prosody"
    steps: list[StepRow] = field(default_factory=list)
    utterances: list[UtteranceRecord] = field(default_factory=list)
    events: list[FeedbackEvent] = field(default_factory=list)
    # wizard keystrokes are kept in the schema for WoZ-mode replays even
    # though the live learner never consumes them
    wizard_keys: list[dict] = field(default_factory=list)
    baseline: SpeakerBaseline | None = None
    score: float = 0.0
    outcome: str = "incomplete"
    calibration: dict = field(default_factory=dict)

    def timed_steps(self) -> list[TimedStep]:
        return [s.timed() for s in self.steps]

    def episode_lengths(self) -> list[tuple[int, str]]:
        """(steps, outcome) per completed episode; outcome delivery|bomb."""
        episodes = []
        count = 0
        for s in self.steps:
            count += 1
            if s.terminal:
                episodes.append((count, "delivery" if s.reward > 0 else "bomb"))
                count = 0
        return episodes


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def session_to_rows(session: SessionData) -> list[dict]:
    header = {
        "kind": "header",
        "format": "session-log",
        "version": LOG_FORMAT_VERSION,
        "map": json.loads(session.grid.to_json()),
        "reward_spec": session.reward_spec.to_dict(),
        "tick_seconds": session.tick_seconds,
        "participant": session.participant,
        "variant": session.variant,
    }
    if session.baseline is not None:
        header["baseline"] = session.baseline.to_dict()
    body: list[tuple[float, int, dict]] = []
    for s in session.steps:
        body.append((s.t, 0, {
            "kind": "step", "t": s.t, "row": s.state.row, "col": s.state.col,
            "has_nut": bool(s.state.has_nut), "action": ACTION_NAMES[s.action],
            "reward": s.reward, "terminal": s.terminal,
        }))
    for u in session.utterances:
        row = {"kind": "utterance", "t": u.t_start, "t_end": u.t_end, "word": u.word}
        row.update(u.features.to_dict())
        body.append((u.t_start, 1, row))
    for e in session.events:
        body.append((e.t, 2, {"kind": "feedback", "t": e.t, "value": e.value}))
    for k in session.wizard_keys:
        body.append((float(k["t"]), 3, {**k, "kind": "wizard_key"}))
    body.sort(key=lambda item: (item[0], item[1]))
    footer = {"kind": "footer", "score": session.score,
              "steps": len(session.steps), "outcome": session.outcome}
    return [header] + [row for _, _, row in body] + [footer]


def write_session_log(path, session: SessionData) -> None:
    with open(path, "w") as fh:
        for row in session_to_rows(session):
            fh.write(dumps_canonical(row) + "\n")


def parse_session_rows(lines) -> list[dict]:
    rows = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReplayError(lineno, f"invalid JSON: {exc}") from exc
        if "kind" not in row:
            raise ReplayError(lineno, "row missing 'kind'")
        rows.append(row)
    if not rows or rows[0]["kind"] != "header":
        raise InvalidSession("log must start with a header row")
    if rows[-1]["kind"] != "footer":
        raise InvalidSession("log must end with a footer row")
    header = rows[0]
    if header.get("format") != "session-log":
        raise FormatVersionError(f"not a session log: {header.get('format')!r}")
    if str(header.get("version", "")).split(".")[0] != LOG_FORMAT_VERSION.split(".")[0]:
        raise FormatVersionError(f"unsupported version {header.get('version')!r}")
    return rows


def session_from_rows(rows: list[dict]) -> SessionData:
    header = rows[0]
    session = SessionData(
        grid=GridMap.from_json(json.dumps(header["map"])),
        reward_spec=RewardSpec.from_dict(header["reward_spec"]),
        tick_seconds=header["tick_seconds"],
        participant=header["participant"],
        variant=header["variant"],
    )
    if "baseline" in header:
        session.baseline = SpeakerBaseline.from_dict(header["baseline"])
    last_t = None
    for lineno, row in enumerate(rows[1:-1], 2):
        t = float(row["t"])
        if last_t is not None and t < last_t:
            raise InvalidSession(f"timestamps go backwards at line {lineno}")
        last_t = t
        if row["kind"] == "step":
            session.steps.append(StepRow(
                t=t,
                state=AgentState(row["row"], row["col"], bool(row["has_nut"])),
                action=ACTION_NAMES.index(row["action"]),
                reward=float(row["reward"]),
                terminal=bool(row["terminal"]),
            ))
        elif row["kind"] == "utterance":
            features = ProsodyFeatures.from_dict(row)
            session.utterances.append(UtteranceRecord(
                word=row["word"], t_start=t, t_end=float(row["t_end"]),
                features=features,
            ))
        elif row["kind"] == "feedback":
            session.events.append(FeedbackEvent(t=t, value=float(row["value"])))
        elif row["kind"] == "wizard_key":
            session.wizard_keys.append({k: v for k, v in row.items() if k != "kind"})
        else:
            raise ReplayError(lineno, f"unknown row kind {row['kind']!r}")
    footer = rows[-1]
    session.score = float(footer.get("score", 0.0))
    session.outcome = str(footer.get("outcome", "incomplete"))
    return session


def read_session_log(path) -> SessionData:
    with open(path) as fh:
        return session_from_rows(parse_session_rows(fh))


def interpolate_missing_steps(session: SessionData) -> SessionData:
    """Fill skipped ticks with linearly interpolated positions.

    Interpolated rows reuse the following step's action and carry the plain
    step cost; enable only when an analysis prefers more data over intact
    sessions.
    """
    tick = session.tick_seconds
    filled: list[StepRow] = []
    prev: StepRow | None = None
    for s in session.steps:
        if prev is not None and s.t - prev.t > 1.5 * tick:
            missing = int(round((s.t - prev.t) / tick)) - 1
            for k in range(1, missing + 1):
                frac = k / (missing + 1)
                filled.append(StepRow(
                    t=prev.t + frac * (s.t - prev.t),
                    state=AgentState(
                        round(prev.state.row + frac * (s.state.row - prev.state.row)),
                        round(prev.state.col + frac * (s.state.col - prev.state.col)),
                        prev.state.has_nut),
                    action=s.action,
                    reward=session.reward_spec.step_cost,
                    terminal=False,
                ))
        filled.append(s)
        prev = s
    out = SessionData(
        grid=session.grid, reward_spec=session.reward_spec,
        tick_seconds=session.tick_seconds, participant=session.participant,
        variant=session.variant, steps=filled, utterances=session.utterances,
        events=session.events, baseline=session.baseline,
        score=session.score, outcome=session.outcome,
    )
    return out


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def render_grid(grid: GridMap, agent: AgentState | None) -> str:
    chars = []
    for r in range(grid.rows):
        line = []
        for c in range(grid.cols):
            cell = (r, c)
            if agent is not None and (agent.row, agent.col) == cell:
                line.append("@")
            elif cell in grid.walls:
                line.append("#")
            elif cell == grid.nut:
                line.append("n")
            elif cell == grid.squirrel:
                line.append("S")
            elif cell in grid.bombs:
                line.append("B")
            else:
                line.append(".")
        chars.append("".join(line))
    return "\n".join(chars)


def replay(lines, interpolate: bool = False):
    """Yield frame dicts reconstructing a logged session tick by tick.

    Flags gaps larger than 1.5 ticks between consecutive steps; with
    interpolate=True, linearly interpolated positions fill the gap.
    """
    rows = parse_session_rows(lines)
    session = session_from_rows(rows)
    grid = session.grid
    tick = session.tick_seconds
    yield {"kind": "header", "map": json.loads(grid.to_json()),
           "participant": session.participant, "variant": session.variant}
    score = 0.0
    prev: StepRow | None = None
    merged = sorted(
        [(s.t, 0, s) for s in session.steps]
        + [(u.t_start, 1, u) for u in session.utterances],
        key=lambda item: (item[0], item[1]),
    )
    for _, tag, item in merged:
        if tag == 1:
            yield {"kind": "feedback_marker", "t": item.t_start, "word": item.word}
            continue
        s = item
        if prev is not None and s.t - prev.t > 1.5 * tick:
            missing = int(round((s.t - prev.t) / tick)) - 1
            frame = {"kind": "gap", "t_from": prev.t, "t_to": s.t,
                     "missing_ticks": missing}
            if interpolate:
                fills = []
                for k in range(1, missing + 1):
                    frac = k / (missing + 1)
                    fills.append({
                        "t": prev.t + frac * (s.t - prev.t),
                        "row": round(prev.state.row + frac * (s.state.row - prev.state.row)),
                        "col": round(prev.state.col + frac * (s.state.col - prev.state.col)),
                    })
                frame["interpolated"] = fills
            yield frame
        score += s.reward
        yield {"kind": "step", "t": s.t, "row": s.state.row, "col": s.state.col,
               "has_nut": bool(s.state.has_nut), "score": score,
               "terminal": s.terminal,
               "grid": render_grid(grid, s.state)}
        prev = s
    yield {"kind": "footer", "score": session.score, "outcome": session.outcome}
