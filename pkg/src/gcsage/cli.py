"""Command-line front end: simulate, estimate, evaluate, cpdp."""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .channel import cpdp, read_channel, synthesize_channel, write_channel, write_cpdp_csv
from .estimator import run_gc_sage
from .exceptions import GCSageError
from .mapping import (
    build_map,
    mask_agreement,
    match_and_score,
    sns_report,
    write_convergence_csv,
    write_error_csv,
    write_map_csv,
    write_map_json,
    write_sns_csv,
)
from .records import (
    RecordError,
    load_config,
    read_json,
    results_from_dict,
    results_to_dict,
    truth_from_dict,
    truth_to_dict,
    write_json,
)
from .scenario import load_scenario

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3

log = logging.getLogger("gcsage")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _manifest(args, out: Path, started: str, **extra) -> None:
    doc = {
        "command": args.command,
        "tool_version": __version__,
        "seed": args.seed,
        "output_directory": str(out),
        "started": started,
        "finished": _now(),
    }
    doc.update({k: (str(v) if isinstance(v, Path) else v) for k, v in extra.items()})
    write_json(out / "manifest.json", doc)


def cmd_simulate(args, out: Path) -> int:
    started = _now()
    path = _existing(args.scenario)
    scenario = load_scenario(path)
    snr = scenario.snr_db if args.snr_db is None else args.snr_db
    truth = scenario.truth_paths()
    chan = synthesize_channel(truth, scenario.arrays, scenario.freq, snr, seed=args.seed)
    write_channel(out / "channel.nfch", chan)
    write_json(out / "truth.json", truth_to_dict(truth, scenario.arrays, scenario.freq))
    _manifest(args, out, started, scenario=path, config=None, snr_db=snr if np.isfinite(snr) else "inf",
              paths=len(truth))
    print(f"wrote {out / 'channel.nfch'} ({chan.shape[0]}x{chan.shape[1]}x{chan.shape[2]}) and {len(truth)} truth paths")
    return EXIT_OK


def cmd_estimate(args, out: Path) -> int:
    started = _now()
    cpath = _existing(args.config)
    chpath = _existing(args.channel)
    config, scenario = load_config(cpath)
    arrays = scenario.arrays
    chan = read_channel(chpath)
    if chan.shape[:2] != (arrays.M, arrays.N):
        raise RecordError(f"tensor is {chan.shape[0]}x{chan.shape[1]} but the config arrays are {arrays.M}x{arrays.N}")
    if chan.freq.count != scenario.freq.count:
        raise RecordError(f"tensor has {chan.freq.count} sub-bands but the config band has {scenario.freq.count}")
    chan.arrays = arrays
    hybrid = not args.scattering_only
    estimates, trace = run_gc_sage(chan, config, hybrid=hybrid)
    mode = "hybrid" if hybrid else "scattering-only"
    write_json(out / "results.json", results_to_dict(estimates, trace, arrays, chan.freq, mode))
    emap = build_map(estimates, arrays)
    write_map_csv(out / "map.csv", emap)
    write_map_json(out / "map.json", emap)
    write_convergence_csv(out / "convergence.csv", trace)
    _manifest(args, out, started, scenario=scenario.source, config=cpath, channel=chpath, mode=mode,
              converged=trace.converged, iterations=len(trace.objectives) - 1)
    print(f"{len(estimates)} paths, objective {trace.final_objective:.6g}, converged={trace.converged}")
    return EXIT_OK if trace.converged else EXIT_NOT_CONVERGED


def cmd_evaluate(args, out: Path) -> int:
    started = _now()
    rpath = _existing(args.results)
    tpath = _existing(args.truth)
    estimates, trace, arrays, freq = results_from_dict(read_json(rpath))
    truths, t_arrays, t_freq = truth_from_dict(read_json(tpath))
    if (t_arrays.M, t_arrays.N) != (arrays.M, arrays.N) or t_freq.count != freq.count:
        raise RecordError("results and truth describe different arrays or bands")
    report = match_and_score(build_map(estimates, arrays), truths, arrays, freq)
    write_error_csv(out / "errors.csv", report)
    sns = sns_report(estimates, args.threshold_db)
    write_sns_csv(out / "sns.csv", sns)
    write_convergence_csv(out / "convergence.csv", trace)
    # mask agreement for each matched truth path
    agreement = {}
    for r in report.rows:
        if r.path_index is not None and r.hop == 0:
            t = next(t for t in truths if t.label == r.path)
            agreement[r.path] = mask_agreement(sns[r.path_index].invisible, t.visibility)
    write_json(out / "summary.json", {
        "mean_error_m": report.mean, "max_error_m": report.max,
        "ghosts": [i + 1 for i in report.ghosts], "misses": [truths[j].label for j in report.misses],
        "mask_agreement": agreement,
    })
    _manifest(args, out, started, results=rpath, truth=tpath, scenario=None, config=None)
    print(f"matched rows {len(report.errors)}, mean error {report.mean:.3f} m, "
          f"ghosts {len(report.ghosts)}, misses {len(report.misses)}")
    return EXIT_OK


def cmd_cpdp(args, out: Path) -> int:
    started = _now()
    chpath = _existing(args.channel)
    chan = read_channel(chpath)
    try:
        profile = cpdp(chan, args.tx)
    except GCSageError as exc:
        raise UsageError(str(exc)) from exc
    write_cpdp_csv(out / "cpdp.csv", profile, chan.freq)
    _manifest(args, out, started, channel=chpath, tx_index=args.tx, scenario=None, config=None)
    print(f"wrote {out / 'cpdp.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="RNG seed (u64)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="BLAS threads, 0 = auto")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = _Parser(prog="gcsage", description=__doc__, parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="synthesize a channel tensor and truth file")
    s.add_argument("scenario")
    s.add_argument("--snr-db", type=float, default=None, help="overrides the scenario SNR; 'inf' for noiseless")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", parents=[common], help="run GC-SAGE on a channel tensor")
    e.add_argument("channel")
    e.add_argument("config")
    mode = e.add_mutually_exclusive_group()
    mode.add_argument("--hybrid", action="store_true", help="scattering plus reflection search (default)")
    mode.add_argument("--scattering-only", action="store_true", help="disable the reflection search")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("evaluate", parents=[common], help="score results against truth")
    v.add_argument("results")
    v.add_argument("truth")
    v.add_argument("--threshold-db", type=float, default=20.0, help="blockage threshold below the median cell")
    v.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("cpdp", parents=[common], help="concatenated power delay profile for one Tx element")
    c.add_argument("channel")
    c.add_argument("--tx", type=int, default=1, help="1-based Tx element index")
    c.set_defaults(func=cmd_cpdp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = getattr(args, "seed", 0)
    threads = getattr(args, "threads", 0)
    if args.seed < 0 or args.seed >= 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    if threads < 0:
        parser.error("--threads must be non-negative")
    out = Path(getattr(args, "out", "."))
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        out.mkdir(parents=True, exist_ok=True)
        if threads:
            from threadpoolctl import threadpool_limits

            limit = threadpool_limits(threads)
        else:
            limit = nullcontext()
        with limit:
            return args.func(args, out)
    except UsageError as exc:
        print(f"gcsage: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GCSageError, RecordError, OSError) as exc:
        print(f"gcsage: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
