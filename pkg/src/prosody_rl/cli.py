"""Command-line entry point tying the toolkit together.

Exit codes: 0 success, 1 usage error, 2 data/processing error. A config
file (TOML-style [section] key = value) can supply any option; explicit
flags always win over the config file.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys

import numpy as np

from . import analysis, audio, gridworld, reward_learning, session, tamer, teacher
from .errors import ProsodyRlError

log = logging.getLogger("prosody_rl")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage problems; the contract wants 1
    def error(self, message):
        raise _UsageError(message)


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.startswith(('"', "'")) and raw.endswith(raw[0]) and len(raw) >= 2:
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    return {
        section: {k: _parse_value(v) for k, v in parser.items(section)}
        for section in parser.sections()
    }


def _resolve(args, config: dict, section: str, name: str, default):
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    for scope in (section, "global"):
        if name in config.get(scope, {}):
            return config[scope][name]
    return default


def build_parser() -> _Parser:
    parser = _Parser(prog="prosody-rl",
                     description="prosody-as-teaching-signal toolkit")
    parser.add_argument("--seed", type=int, default=None, help="global RNG seed")
    parser.add_argument("--config", default=None, help="config file path")
    # the same globals are accepted after the subcommand; SUPPRESS keeps a
    # pre-subcommand value from being clobbered by the subparser default
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("extract", help="WAV + labels JSONL -> utterance JSONL")
    p.add_argument("--wav", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)

    p = add_parser("solve", help="map JSON -> Q/advantage CSV")
    p.add_argument("--map", dest="map_path", default=None)
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--cols", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--map-out", default=None, help="also write the generated map JSON")

    p = add_parser("simulate", help="synthetic teacher -> session log / dataset")
    p.add_argument("--mode", choices=["intrl", "demo"], default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--ticks", type=int, default=None)
    p.add_argument("--snippets", type=int, default=None)
    p.add_argument("--expressiveness", type=float, default=None)
    p.add_argument("--pos-bias", type=float, default=None)
    p.add_argument("--neg-boost", type=float, default=None)
    p.add_argument("--sign-noise", type=float, default=None)

    p = add_parser("train-tamer", help="session log -> H checkpoint + score")
    p.add_argument("--session", required=True)
    p.add_argument("--variant", choices=[tamer.BASELINE, tamer.PROSODY], default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--interpolate", action="store_true", default=None,
                   help="linearly interpolate skipped step timestamps first")

    p = add_parser("train-trex", help="snippet dataset -> reward checkpoint + eval")
    p.add_argument("--dataset", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--t0", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--pairs", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--curve-out", default=None)

    p = add_parser("analyze", help="session log or dataset -> report")
    p.add_argument("--session", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--json", action="store_true", default=None)
    p.add_argument("--csv-out", default=None)

    p = add_parser("replay", help="render a session log tick by tick")
    p.add_argument("--session", required=True)
    p.add_argument("--speed", type=float, default=None)
    p.add_argument("--json", action="store_true", default=None)
    p.add_argument("--interpolate", action="store_true", default=None)

    p = add_parser("serve", help="run the live teaching service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--log-dir", default=None)
    p.add_argument("--tick-seconds", type=float, default=None)
    return parser


def _cmd_extract(args, config) -> int:
    buffer = audio.read_wav(args.wav)
    labels = audio.read_labels_jsonl(args.labels)
    records = audio.segment_utterances(buffer, labels)
    audio.write_records_jsonl(args.out, records)
    print(f"wrote {len(records)} utterance records to {args.out}")
    return 0


def _cmd_solve(args, config, seed: int) -> int:
    if args.map_path:
        with open(args.map_path) as fh:
            grid = gridworld.GridMap.from_json(fh.read())
    else:
        rows = _resolve(args, config, "solve", "rows", 12)
        cols = _resolve(args, config, "solve", "cols", 12)
        grid = gridworld.generate_map(rows, cols, seed)
    solution = gridworld.value_iteration(grid)
    gridworld.solution_to_csv(solution, args.out)
    if args.map_out:
        with open(args.map_out, "w") as fh:
            fh.write(grid.to_json() + "\n")
    print(f"solved {len(solution.states())} states -> {args.out}")
    return 0


def _make_profile(args, config, seed: int) -> teacher.TeacherProfile:
    return teacher.TeacherProfile(
        pos_bias=_resolve(args, config, "simulate", "pos-bias", 2.0),
        expressiveness=_resolve(args, config, "simulate", "expressiveness", 0.25),
        neg_intensity_boost=_resolve(args, config, "simulate", "neg-boost", 1.5),
        sign_noise=_resolve(args, config, "simulate", "sign-noise", 0.0),
        seed=seed,
    )


def _cmd_simulate(args, config, seed: int) -> int:
    mode = _resolve(args, config, "simulate", "mode", "intrl")
    grid = gridworld.generate_map(rng_seed=seed)
    solution = gridworld.value_iteration(grid)
    profile = _make_profile(args, config, seed)
    if mode == "intrl":
        ticks = _resolve(args, config, "simulate", "ticks", 1400)
        data = teacher.generate_intrl_session(grid, solution, profile, ticks)
        session.write_session_log(args.out, data)
        print(f"wrote session with {len(data.steps)} steps / "
              f"{len(data.events)} feedback events to {args.out}")
    else:
        count = _resolve(args, config, "simulate", "snippets", 500)
        snippets = teacher.generate_demo_dataset(grid, solution, profile, count)
        reward_learning.write_snippets_jsonl(args.out, snippets)
        print(f"wrote {len(snippets)} snippets to {args.out}")
    return 0


def _cmd_train_tamer(args, config, seed: int) -> int:
    data = session.read_session_log(args.session)
    if _resolve(args, config, "train-tamer", "interpolate", False):
        data = session.interpolate_missing_steps(data)
    variant = _resolve(args, config, "train-tamer", "variant", tamer.PROSODY)
    model = tamer.train_offline(data.timed_steps(), data.events, variant, data.grid)
    solution = gridworld.value_iteration(data.grid, data.reward_spec)
    count = tamer.evaluate_policy(model, solution)
    if args.out:
        model.save(args.out, data.grid)
    print(count)
    return 0


def _cmd_train_trex(args, config, seed: int) -> int:
    snippets = reward_learning.read_snippets_jsonl(args.dataset)
    cfg = reward_learning.TrainConfig(
        alpha=_resolve(args, config, "train-trex", "alpha", 1.0),
        t0=_resolve(args, config, "train-trex", "t0", 0.1),
        lr=_resolve(args, config, "train-trex", "lr", 1e-3),
        epochs=_resolve(args, config, "train-trex", "epochs", 60),
        num_ranked_pairs=_resolve(args, config, "train-trex", "pairs", 200),
        seed=seed,
    )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(snippets))
    split = max(3, int(0.8 * len(snippets)))
    train_set = [snippets[i] for i in order[:split]]
    held = [snippets[i] for i in order[split:]]
    net = reward_learning.RewardNet(snippets[0].states.shape[1], seed=seed)
    curve = reward_learning.train(net, train_set, cfg)
    if args.out:
        net.save(args.out)
    if args.curve_out:
        reward_learning.write_loss_curve(args.curve_out, curve)
    if len(held) >= 3:
        result = reward_learning.evaluate_reward(net, held)
        print(f"held-out spearman: {result.statistic:.4f} (p={result.p_value:.3g}, "
              f"n={result.n})")
    print(f"final loss: {curve[-1]['loss']:.4f} (trex {curve[-1]['trex']:.4f}, "
          f"cal {curve[-1]['cal']:.4f})")
    return 0


def _cmd_analyze(args, config, seed: int) -> int:
    as_json = bool(_resolve(args, config, "analyze", "json", False))
    if args.session:
        data = session.read_session_log(args.session)
        solution = gridworld.value_iteration(data.grid, data.reward_spec)
        report = analysis.analyze_intrl_session(data, solution)
        if args.csv_out:
            with open(args.csv_out, "w") as fh:
                fh.write(analysis.intrl_rows_csv(data, solution))
    elif args.dataset:
        snippets = reward_learning.read_snippets_jsonl(args.dataset)
        report = analysis.analyze_demo_dataset(snippets)
    else:
        raise _UsageError("analyze needs --session or --dataset")
    print(analysis.report_to_json(report) if as_json else report.to_text())
    return 0


def _cmd_replay(args, config, seed: int) -> int:
    as_json = bool(_resolve(args, config, "replay", "json", False))
    interpolate = bool(_resolve(args, config, "replay", "interpolate", False))
    speed = _resolve(args, config, "replay", "speed", 0.0)
    import time as _time

    with open(args.session) as fh:
        lines = fh.readlines()
    tick = None
    for frame in session.replay(lines, interpolate=interpolate):
        if as_json:
            print(session.dumps_canonical(frame))
        elif frame["kind"] == "step":
            print(f"t={frame['t']:8.2f}  score={frame['score']:+8.1f}"
                  f"{'  [terminal]' if frame['terminal'] else ''}")
            print(frame["grid"])
        elif frame["kind"] == "feedback_marker":
            print(f"t={frame['t']:8.2f}  teacher: {frame['word'].upper()}")
        elif frame["kind"] == "gap":
            print(f"WARNING: {frame['missing_ticks']} missing tick(s) "
                  f"between t={frame['t_from']:.2f} and t={frame['t_to']:.2f}")
        elif frame["kind"] == "header":
            tick = 1.25
        if speed and frame["kind"] == "step" and tick:
            _time.sleep(tick / speed)
    return 0


def _cmd_serve(args, config, seed: int) -> int:
    from . import service

    cfg = service.ServiceConfig(
        tick_seconds=_resolve(args, config, "serve", "tick-seconds", session.DEFAULT_TICK_S),
        rng_seed=seed,
        log_dir=_resolve(args, config, "serve", "log-dir", None),
    )
    service.serve(cfg,
                  host=_resolve(args, config, "serve", "host", "127.0.0.1"),
                  port=_resolve(args, config, "serve", "port", 8008))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("PROSODY_RL_LOG_LEVEL", "WARNING").upper())
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        config = _load_config(args.config)
        seed = args.seed if args.seed is not None else config.get("global", {}).get("seed", 0)
        dispatch = {
            "extract": lambda: _cmd_extract(args, config),
            "solve": lambda: _cmd_solve(args, config, seed),
            "simulate": lambda: _cmd_simulate(args, config, seed),
            "train-tamer": lambda: _cmd_train_tamer(args, config, seed),
            "train-trex": lambda: _cmd_train_trex(args, config, seed),
            "analyze": lambda: _cmd_analyze(args, config, seed),
            "replay": lambda: _cmd_replay(args, config, seed),
            "serve": lambda: _cmd_serve(args, config, seed),
        }
        return dispatch[args.command]()
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ProsodyRlError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
