"""Command-line front end: ``sstepred {simulate,detect,fit,predict,evaluate}``.

Every option can also come from a flat ``key = value`` config file passed
with ``--config``; keys are option names with dashes or underscores.
Command-line flags override the file, which overrides the defaults.

Exit codes: 0 success, 1 usage or validation error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arma import P_MAX, Q_MAX, fit_interval_model
from .errors import DataError, InsufficientHistory, NoCandidates, SstePredError
from .evaluation import (
    DEFAULT_PROPORTIONS,
    DEFAULT_TOP_N,
    DEFAULT_XI,
    MIN_EVENTS,
    ExperimentConfig,
    evaluate,
    train_size,
)
from .events import DetectionParams, detect_sstes, event_sequences, read_events, write_events
from .ingestion import parse_checkins, parse_friendship
from .kalman import INTERVAL_FLOOR, learn_by_kf, state_from_fit, time_prediction
from .location import DEFAULT_HALF_LIFE, LocationScorer, kmeans_sites, parse_sites
from .synthgen import GeneratorConfig, generate_social_dataset, write_dataset

log = logging.getLogger("sstepred")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# option groups


def _add_detection(p):
    d = DetectionParams()
    p.add_argument("--epsilon-time", type=float, default=d.epsilon_time, help="max time spread of an event, seconds")
    p.add_argument("--epsilon-dist", type=float, default=d.epsilon_dist, help="max pairwise distance, metres")
    p.add_argument("--min-participants", type=int, default=d.min_participants, help="min distinct users per event")


def _add_inputs(p, events=True, sites=True):
    p.add_argument("--checkins", help="check-in CSV (user,timestamp,lat,lon)")
    p.add_argument("--friends", help="friendship CSV (u,v)")
    if events:
        p.add_argument("--events", help="events JSONL from `detect`; detected on the fly when omitted")
    if sites:
        p.add_argument("--sites", help="sites CSV (site_id,lat,lon); k-means over check-ins when omitted")
        p.add_argument("--n-sites", type=int, default=50, help="k for k-means sites")


def _add_model(p):
    p.add_argument("--p-max", type=int, default=P_MAX, help="largest AR order considered")
    p.add_argument("--q-max", type=int, default=Q_MAX, help="largest MA order considered")


def _add_filter(p):
    p.add_argument("--process-noise", type=float, default=0.0, help="Kalman process noise delta (Q = delta I)")
    p.add_argument("--interval-floor", type=float, default=INTERVAL_FLOOR, help="minimum forecast interval, seconds")


def _add_location(p):
    p.add_argument("--smoothing", type=float, default=0.0, help="Laplace smoothing alpha of the temporal score")
    p.add_argument("--half-life", type=float, default=DEFAULT_HALF_LIFE, help="recency half-life of the social score, seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sstepred", description=__doc__.split("\n\n")[0],
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                       help="stderr log level")
        return p

    g = GeneratorConfig()
    p = command("simulate", "write a synthetic check-in dataset with planted events")
    p.add_argument("--out", default="data", help="output directory")
    p.add_argument("--seed", type=int, default=g.seed, help="random seed")
    p.add_argument("--n-users", type=int, default=g.n_users, help="number of users")
    p.add_argument("--weeks", type=int, default=g.weeks, help="weeks of simulated activity")
    p.add_argument("--n-regions", type=int, default=g.n_regions, help="number of grid sites")
    p.add_argument("--edge-prob", type=float, default=g.edge_prob, help="extra friendship edge probability")
    p.add_argument("--beta", type=float, default=g.beta, help="social-influence probability")
    p.add_argument("--schedule-size", type=int, default=g.schedule_size, help="regions in each weekly schedule")
    p.add_argument("--schedule-decay", type=float, default=g.schedule_decay, help="probability ratio of successive schedule regions")
    p.add_argument("--interval-phi", type=_floats, default=g.interval_phi, help="AR coefficients of meeting-time noise")
    p.add_argument("--interval-theta", type=_floats, default=g.interval_theta, help="MA coefficients of meeting-time noise")
    p.add_argument("--interval-sigma", type=float, default=g.interval_sigma, help="sd of meeting-time noise, seconds")
    p.add_argument("--background-rate", type=float, default=g.background_rate, help="background check-ins per user per week")
    p.set_defaults(func=cmd_simulate)

    p = command("detect", "detect SSTEs in a check-in file")
    _add_inputs(p, events=False, sites=False)
    p.add_argument("--out", default="events.jsonl", help="events JSONL output")
    _add_detection(p)
    p.set_defaults(func=cmd_detect)

    p = command("fit", "fit an ARMA model to every user's interval series")
    _add_inputs(p, sites=False)
    p.add_argument("--out", default="models.jsonl", help="model JSONL output")
    _add_detection(p)
    _add_model(p)
    p.set_defaults(func=cmd_fit)

    p = command("predict", "predict each user's next event time and top-N regions")
    _add_inputs(p)
    p.add_argument("--out", default="predictions.jsonl", help="prediction JSONL output")
    p.add_argument("--xi", type=float, default=0.8, help="weight of the temporal score")
    p.add_argument("--top-n", type=int, default=10, help="regions per prediction")
    p.add_argument("--train-proportion", type=float, default=0.8,
                   help="share of each history used for the batch fit; the rest is learned online")
    p.add_argument("--seed", type=int, default=0, help="seed for k-means sites")
    _add_detection(p)
    _add_model(p)
    _add_filter(p)
    _add_location(p)
    p.set_defaults(func=cmd_predict)

    p = command("evaluate", "run the train/test protocol and write report tables")
    _add_inputs(p)
    p.add_argument("--out", default="report", help="report directory")
    p.add_argument("--proportions", type=_floats, default=DEFAULT_PROPORTIONS, help="training proportions")
    p.add_argument("--xi-values", type=_floats, default=DEFAULT_XI, help="blend weights")
    p.add_argument("--top-n-values", type=_ints, default=DEFAULT_TOP_N, help="N of Accuracy@TopN")
    p.add_argument("--convergence-min-steps", type=int, default=60,
                   help="shortest test segment that gets a convergence trace")
    p.add_argument("--seed", type=int, default=0, help="seed for k-means sites")
    _add_detection(p)
    _add_filter(p)
    _add_location(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


# ---------------------------------------------------------------------------
# config file


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError("no such config file", path=path)
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(sub: argparse.ArgumentParser, values: dict) -> None:
    actions = {a.dest: a for a in sub._actions if a.option_strings and a.dest not in ("help", "config")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    defaults = {}
    for key, text in values.items():
        a = actions[key]
        try:
            defaults[key] = a.type(text) if a.type else text
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config key {key}: {exc}") from None
        if a.choices and defaults[key] not in a.choices:
            raise UsageError(f"config key {key}: {text!r} not in {list(a.choices)}")
    sub.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("a command is required")
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(sub, read_config(args.config))
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# shared loading


def _require(args, *names):
    missing = [n for n in names if not getattr(args, n, None)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _detection(args) -> DetectionParams:
    return DetectionParams(args.epsilon_time, args.epsilon_dist, args.min_participants)


def _load(args):
    _require(args, "checkins", "friends")
    params = _detection(args)
    checkins = parse_checkins(args.checkins)
    graph = parse_friendship(args.friends)
    if getattr(args, "events", None):
        try:
            events = read_events(args.events, checkins)
        except (KeyError, ValueError) as exc:
            raise DataError(f"events do not match the check-in file ({exc})", path=args.events) from None
    else:
        events = detect_sstes(checkins, graph, params)
    return checkins, graph, events


def _region_map(args, checkins):
    if getattr(args, "sites", None):
        return parse_sites(args.sites)
    if len(checkins) == 0:
        raise DataError("no check-ins to derive sites from", path=args.checkins)
    log.info("no site file; clustering check-ins into %d sites", args.n_sites)
    return kmeans_sites(checkins.coords, k=args.n_sites, seed=args.seed)


def _write_jsonl(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = GeneratorConfig(
        n_users=args.n_users, weeks=args.weeks, n_regions=args.n_regions, edge_prob=args.edge_prob,
        beta=args.beta, schedule_size=args.schedule_size, schedule_decay=args.schedule_decay,
        interval_phi=tuple(args.interval_phi), interval_theta=tuple(args.interval_theta),
        interval_sigma=args.interval_sigma, background_rate=args.background_rate, seed=args.seed,
    )
    ds = generate_social_dataset(cfg)
    paths = write_dataset(ds, args.out)
    print(f"wrote {len(ds.checkins)} check-ins, {len(ds.graph.edges)} friendships, "
          f"{len(ds.sites)} sites, {len(ds.events)} planted events to {args.out}")
    for p in paths.values():
        log.info("wrote %s", p)
    return 0


def cmd_detect(args) -> int:
    checkins, graph, events = _load(args)
    write_events(events, args.out)
    print(f"detected {len(events)} events from {len(checkins)} check-ins -> {args.out}")
    return 0


def cmd_fit(args) -> int:
    _, _, events = _load(args)
    rows, skipped = [], 0
    for user, seq in event_sequences(events).items():
        x = np.diff(seq.times)
        try:
            fit = fit_interval_model(x, args.p_max, args.q_max)
        except SstePredError as exc:
            log.warning("user %s not fitted: %s", user, exc)
            skipped += 1
            continue
        row = fit.to_json(user)
        row["n_intervals"] = len(x)
        rows.append(row)
    _write_jsonl(args.out, rows)
    print(f"fitted {len(rows)} users, skipped {skipped} -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    if not 0.0 <= args.xi <= 1.0:
        raise ValueError("--xi must lie in [0, 1]")
    if args.top_n < 1:
        raise ValueError("--top-n must be at least 1")
    if not 0.0 < args.train_proportion < 1.0:
        raise ValueError("--train-proportion must lie in (0, 1)")
    checkins, graph, events = _load(args)
    region_map = _region_map(args, checkins)
    scorer = LocationScorer(checkins, graph, region_map, half_life=args.half_life, smoothing=args.smoothing)
    rows, skipped = [], 0
    for user, seq in event_sequences(events).items():
        try:
            if len(seq.events) < MIN_EVENTS:
                raise InsufficientHistory(f"{len(seq.events)} events (< {MIN_EVENTS})")
            x = np.diff(seq.times)
            k = train_size(len(seq.events), args.train_proportion)
            fit = fit_interval_model(x[: k - 1], args.p_max, args.q_max)
            state = state_from_fit(fit, x[: k - 1], args.process_noise, user=user)
            for v in x[k - 1:]:
                state = learn_by_kf(state, v)
            tp = time_prediction(state, seq.times[-1], args.interval_floor)
            ranked = scorer.rank(user, seq.events, tp.event_time_hat, args.xi, args.top_n)
        except (InsufficientHistory, NoCandidates) as exc:
            log.warning("no prediction for %s: %s", user, exc)
            skipped += 1
            continue
        rows.append({
            "user": user,
            "tau_hat": tp.event_time_hat,
            "interval_hat": tp.interval_hat,
            "clamped": tp.clamped,
            "predictions": [r.to_json() for r in ranked],
        })
    _write_jsonl(args.out, rows)
    print(f"predicted {len(rows)} users, {skipped} without prediction -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    config = ExperimentConfig(
        train_proportions=tuple(args.proportions), xi_values=tuple(args.xi_values),
        top_n_values=tuple(args.top_n_values), smoothing=args.smoothing, half_life=args.half_life,
        process_noise=args.process_noise, interval_floor=args.interval_floor,
    )
    checkins, graph, events = _load(args)
    region_map = _region_map(args, checkins)
    report = evaluate(event_sequences(events), config, checkins, graph, region_map,
                      convergence_min_steps=args.convergence_min_steps)
    paths = report.write(args.out)
    print(f"evaluated {report.mse[0][3] if report.mse else 0} users "
          f"({len(report.excluded)} excluded); wrote {len(paths)} files to {args.out}")
    return 0


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    def __init__(self):
        logging.Handler.__init__(self)

    @property
    def stream(self):
        return sys.stderr


def _configure_logging(level: str) -> None:
    if not any(isinstance(h, _StderrHandler) for h in log.handlers):
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)
    log.setLevel(level)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"sstepred: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"sstepred: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args.log_level)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sstepred: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"sstepred: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InsufficientHistory as exc:
        print(f"sstepred: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"sstepred: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
