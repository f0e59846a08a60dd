"""Command line front end.

Every output file starts with a ``# manifest: {...}`` line that records the
command and all result-relevant arguments, so ``eventimportance rerun FILE``
reproduces it. Progress goes to stderr, data only to files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import ContestError, PathLimitExceeded
from .engine import (
    SimulationConfig,
    exact_reward_probabilities,
    path_blocks,
    sample_reward_counts,
    stream_rng,
)
from .distance import family_from_arrays, get_distance

log = logging.getLogger("eventimportance")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL, EXIT_ORACLE_FAIL = 0, 1, 2, 3, 4

# arguments that never change results and stay out of the manifest
_VOLATILE = {"threads", "out", "per_sample", "verbose", "func", "config", "timestamp", "source"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config and manifest


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContestError(f"{path}:{n}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ContestError(f"{path}:{n}: empty key")
            out[key] = value
    return out


def _timestamp(args) -> Optional[str]:
    if getattr(args, "timestamp", None):
        return args.timestamp
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(int(epoch)))
    return None


def manifest(args) -> dict:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in _VOLATILE}
    return {
        "command": args.command,
        "config": getattr(args, "config", None),
        "seed": getattr(args, "seed", None),
        "n_mc": getattr(args, "n_mc", None),
        "iterations": getattr(args, "iterations", None),
        "distance": getattr(args, "distance", None),
        "timestamp": _timestamp(args),
        "version": __version__,
        "args": params,
    }


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows, meta: dict) -> None:
    buf = io.StringIO()
    buf.write("# manifest: " + json.dumps(meta, sort_keys=True, ensure_ascii=False) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    prefix = "# manifest: "
    if not first.startswith(prefix):
        raise ContestError(f"{path}: no manifest line")
    return json.loads(first[len(prefix) :])


def _config(args, distance=None, target=None) -> SimulationConfig:
    return SimulationConfig(
        n_mc=args.n_mc,
        seed=args.seed,
        iterations=getattr(args, "iterations", 1),
        distance=distance or getattr(args, "distance", "jsd"),
        target_label=target,
        threads=args.threads,
    )


def _positive(name):
    def check(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}") from None
        if value < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {value}")
        return value

    return check


def _progress(label):
    def report(done, total):
        if done == total or done % max(1, total // 20) == 0:
            log.info("%s: %d/%d", label, done, total)

    return report


# --------------------------------------------------------------------------
# commands


def cmd_primaries(args) -> int:
    from . import primaries as pm

    states = pm.load_states(args.states)
    config = _config(args, "winprob", pm.NOMINATED)
    meta = manifest(args)
    if args.state or args.positions:
        if not (args.state and args.positions):
            raise UsageError("--state and --positions go together")
        try:
            positions = [int(p) for p in args.positions.split(",") if p.strip()]
        except ValueError:
            raise UsageError(f"--positions must be a comma list of integers, got {args.positions!r}") from None
        result = pm.positional_study(states, args.state, positions, args.samples, config)
        rows = [
            (args.state, p, i, float(v)) for p in positions for i, v in enumerate(result[p])
        ]
        write_csv(args.out, ["state", "position", "sample", "ei"], rows, meta)
        return EXIT_OK
    result = pm.run_study(states, args.mode, args.samples, config, progress=_progress("samples"))
    header = ["state", "mode", "mean_ei", "sd_ei", "n_samples", "n_mc", "seed"]
    write_csv(args.out, header, [[r[h] for h in header] for r in result.rows()], meta)
    if args.per_sample:
        rows = [(i, k, float(result.values[i, j])) for i in range(len(result.values)) for j, k in enumerate(result.names)]
        write_csv(args.per_sample, ["sample", "state", "ei"], rows, meta)
    return EXIT_OK


def _reward_setup(path, teams):
    from . import league as lg

    cfg = read_config(path)
    size = int(cfg.get("league_size", len(teams)))
    if "separators" in cfg:
        structure = lg.RewardStructure.from_separators(size, [int(x) for x in cfg["separators"].split(",")])
    elif "code" in cfg:
        structure = lg.RewardStructure.from_code(cfg["code"], size, int(cfg.get("el_playoff_ranks", 0)))
    else:
        raise lg.LeagueDataError(f"{path}: needs 'code' or 'separators'")
    overrides, cups = {}, {}
    for key, value in cfg.items():
        if key.startswith("override."):
            team = key[len("override.") :]
            remap = {}
            for pair in value.split(","):
                src, _, dst = pair.partition(">")
                remap[src.strip()] = dst.strip()
            overrides[team] = remap
        elif key.startswith("cup."):
            _, name, field = key.split(".", 2)
            cups.setdefault(name, {})[field] = value
    cup_states = []
    for name, fields in sorted(cups.items()):
        finalists = [t.strip() for t in fields.get("finalists", "").split("|") if t.strip()]
        weights = [float(w) for w in fields.get("weights", "").split("|") if w.strip()] or [
            1.0 / len(finalists)
        ] * len(finalists)
        fixed = fields.get("pairing_fixed", "true").lower() in ("1", "true", "yes")
        cup_states.append(lg.CupState(tuple(finalists), tuple(weights), fixed, name))
    return structure, cup_states, overrides


def cmd_league(args) -> int:
    from . import league as lg

    fixtures = args.fixtures or lg.bundled(lg.BUNDESLIGA_FIXTURES)
    standings = args.standings
    if standings is None and args.fixtures is None:
        standings = lg.bundled(lg.BUNDESLIGA_STANDINGS)
    ratings_path = args.ratings or lg.bundled(lg.BUNDESLIGA_RATINGS)
    rewards_path = args.rewards or lg.bundled(lg.BUNDESLIGA_REWARDS)
    season = lg.season_from_files(fixtures, standings)
    ratings = lg.load_ratings(ratings_path)
    structure, cups, overrides = _reward_setup(rewards_path, season.teams)
    params = lg.MatchModelParams(ei_home_coef=args.ei_coef, ei_away_coef=-args.ei_coef)
    config = _config(args)
    result = lg.season_ei(
        season,
        ratings,
        structure,
        config,
        params,
        cups=cups,
        overrides=overrides,
        matchday=args.matchday,
        scores=not args.no_scores,
    )
    header = ["matchday", "home", "away", "ei_home", "ei_away", "pi_h", "pi_d", "pi_a", "iteration"]
    rows = [
        (m.matchday, m.home, m.away, m.ei_home, m.ei_away, m.pi_h, m.pi_d, m.pi_a, m.iteration)
        for m in result.rows(all_iterations=not args.final_only)
    ]
    write_csv(args.out, header, rows, meta=manifest(args))
    return EXIT_OK


def toy_contest(cfg: Optional[dict] = None):
    """Four-team single round robin without scores, from flat config values."""
    from . import league as lg

    cfg = dict(cfg or {})
    teams = [t.strip() for t in cfg.get("teams", "North,South,East,West").split(",")]
    strengths = [float(x) for x in cfg.get("strengths", "0.6,0.2,-0.1,-0.5").split(",")]
    if len(strengths) != len(teams):
        raise lg.LeagueDataError("teams and strengths differ in length")
    separators = [int(x) for x in cfg.get("separators", "1,1,2,3,3").split(",")]
    season = lg.SeasonState(tuple(teams), lg.generate_round_robin(teams, double=False))
    cups = []
    if cfg.get("cup.finalists"):
        finalists = tuple(t.strip() for t in cfg["cup.finalists"].split("|"))
        weights = tuple(float(w) for w in cfg.get("cup.weights", "").split("|") if w.strip()) or tuple(
            [1.0 / len(finalists)] * len(finalists)
        )
        cups.append(lg.CupState(finalists, weights))
    contest = lg.build_league_contest(
        season,
        dict(zip(teams, strengths)),
        lg.RewardStructure.from_separators(len(teams), separators),
        cups=cups,
        scores=False,
        name="toy",
    )
    if cfg.get("deterministic", "false").lower() in ("1", "true", "yes"):
        contest = contest.with_model(DeterministicMatchModel())
    return contest


class DeterministicMatchModel:
    """Stronger side (home side on equal strength) always wins."""

    consumes_ei = False

    def probabilities(self, event, covariates):
        diff = covariates["strength_home"] - covariates["strength_away"]
        return (1.0, 0.0, 0.0) if diff >= 0 else (0.0, 0.0, 1.0)


def oracle_report(contest, n_mc: int, seed: int, tolerance: float, threads=None) -> list[dict]:
    """MC against exact conditional reward distributions for every event and outcome."""
    state = contest.initial_state()
    config = SimulationConfig(n_mc=n_mc, seed=seed, iterations=1, threads=threads)
    labels = contest.reward_labels
    rows = []
    for e in state.unresolved:
        ev = contest.events[e]
        weights = state.probabilities(e)
        exact, approx = [], []
        for y, outcome in enumerate(ev.outcome_space):
            ex = exact_reward_probabilities(state, {e: y})
            counts = sum(
                sample_reward_counts(state, {e: y}, size, stream_rng(config, 1, contest.event_index(e), y, b))
                for b, size in enumerate(path_blocks(n_mc))
            )
            mc = counts / n_mc
            exact.append(ex)
            approx.append(mc)
            for k in contest.contestants:
                kidx = contest.contestant_index(k)
                gaps = np.abs(mc[kidx] - ex[kidx])
                tv = 0.5 * gaps.sum()
                rows.append(
                    {
                        "event": e,
                        "outcome": outcome,
                        "contestant": k,
                        "tv_gap": float(tv),
                        "max_label_gap": float(gaps.max()),
                        "pass": bool(tv <= tolerance),
                    }
                )
        for k in ev.participants:
            kidx = contest.contestant_index(k)
            for metric in ("jsd", "tv"):
                fn = get_distance(metric)
                ex_ei = fn(family_from_arrays(labels, [m[kidx] for m in exact], weights))
                mc_ei = fn(family_from_arrays(labels, [m[kidx] for m in approx], weights))
                for r in rows:
                    if r["event"] == e and r["contestant"] == k:
                        r[f"ei_{metric}_exact"] = ex_ei
                        r[f"ei_{metric}_mc"] = mc_ei
    return rows


def cmd_oracle(args) -> int:
    cfg = read_config(args.config) if args.config else {}
    contest = toy_contest(cfg)
    try:
        rows = oracle_report(contest, args.n_mc, args.seed, args.tolerance, args.threads)
    except PathLimitExceeded as exc:
        raise ContestError(f"{exc}; try a smaller toy contest") from None
    header = ["event", "outcome", "contestant", "tv_gap", "max_label_gap", "pass"]
    extra = ["ei_jsd_exact", "ei_jsd_mc", "ei_tv_exact", "ei_tv_mc"]
    write_csv(
        args.out,
        header + extra,
        [[r[h] for h in header] + [r.get(x, "") for x in extra] for r in rows],
        manifest(args),
    )
    worst = max(r["tv_gap"] for r in rows)
    failed = sum(not r["pass"] for r in rows)
    status = "PASS" if failed == 0 else "FAIL"
    print(
        f"{status}: {len(rows)} conditionals, worst TV gap {worst:.4f}, "
        f"tolerance {args.tolerance}, {failed} above tolerance",
        file=sys.stderr,
    )
    return EXIT_OK if failed == 0 else EXIT_ORACLE_FAIL


def cmd_rerun(args) -> int:
    meta = read_manifest(args.source)
    argv = [meta["command"]]
    for key, value in meta["args"].items():
        if key == "command" or value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        argv += [flag] if value is True else [flag, str(value)]
    if meta.get("timestamp"):
        argv += ["--timestamp", meta["timestamp"]]
    if meta.get("config"):
        argv += ["--config", meta["config"]]
    argv += ["--out", args.out]
    if args.threads is not None:
        argv += ["--threads", str(args.threads)]
    return main(argv)


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eventimportance", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, n_mc, seeds=True):
        p.add_argument("--config", help="flat key = value file supplying option defaults")
        p.add_argument("--n-mc", type=_positive("--n-mc"), default=n_mc, help="Monte Carlo runs per branch")
        if seeds:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=_positive("--threads"), default=None, help="default: EI_THREADS or all cores")
        p.add_argument("--timestamp", help="timestamp recorded in the manifest (default: SOURCE_DATE_EPOCH)")
        p.add_argument("--out", required=True, help="output CSV")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("primaries", help="primaries schedule study")
    common(p, 5000)
    p.add_argument("--mode", choices=["regular", "random", "rank-increase"], default="regular")
    p.add_argument("--samples", type=_positive("--samples"), default=1000, help="preference samples")
    p.add_argument("--states", help="states CSV (default: bundled 2020 data)")
    p.add_argument("--state", help="state for a positional study")
    p.add_argument("--positions", help="comma list of 1-based schedule positions")
    p.add_argument("--per-sample", help="also write per-sample EI values here")
    p.set_defaults(func=cmd_primaries)

    p = sub.add_parser("league", help="EI per match of a league season")
    common(p, 7500)
    p.add_argument("--iterations", type=_positive("--iterations"), default=3)
    p.add_argument("--distance", choices=["jsd", "tv"], default="jsd")
    p.add_argument("--ei-coef", type=float, default=0.0, help="+c on home EI, -c on away EI in the outcome model")
    p.add_argument("--matchday", type=int, help="analyse only this matchday; earlier results are history")
    p.add_argument("--fixtures", help="fixtures CSV (default: bundled Bundesliga 2017/18 final day)")
    p.add_argument("--standings", help="carried-over standings CSV")
    p.add_argument("--ratings", help="team strength CSV")
    p.add_argument("--rewards", help="reward configuration file")
    p.add_argument("--no-scores", action="store_true", help="ignore goals; ties fall to team name")
    p.add_argument("--final-only", action="store_true", help="emit only the last iteration")
    p.set_defaults(func=cmd_league)

    p = sub.add_parser("oracle", help="Monte Carlo against exact enumeration on a toy league")
    common(p, 50_000)
    p.add_argument("--tolerance", type=float, default=0.02, help="largest allowed TV gap")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("rerun", help="repeat the run recorded in an output file's manifest")
    p.add_argument("source", help="output file carrying a manifest line")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=_positive("--threads"), default=None)
    p.set_defaults(func=cmd_rerun)
    return parser


def _apply_config(parser, argv):
    """Re-parse with config-file values as defaults; explicit flags still win."""
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path:
        return args
    values = read_config(path)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("out", "config"):
            continue
        action = known[dest]
        if action.type is not None:
            value = action.type(value)
        elif isinstance(action, argparse._StoreTrueAction):
            value = value.lower() in ("1", "true", "yes")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    except (OSError, ContestError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContestError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last resort
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
