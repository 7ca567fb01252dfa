"""Command-line entry point: ``ttlscope <subcommand> ...``.

Exit codes: 0 success, 1 data error, 2 usage error.  Report files are written
atomically and embed the effective configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from dataclasses import asdict
from pathlib import Path

from ttlscope import anomaly, distributions, pingback, stability, subnets, synth
from ttlscope.hopcount import HOP_COUNT
from ttlscope.io import atomic_write
from ttlscope.records import ParseError, read_records
from ttlscope.state import (DEFAULT_BIN_WIDTH_US, RecordBeforeEpoch, StateTable, dump_snapshot,
                            excise_bins, load_snapshot)


class DataError(Exception):
    pass


def _effective_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def load_table(path: str, args) -> StateTable:
    """Read a record CSV or an NDJSON snapshot into a StateTable."""
    if path.endswith((".ndjson", ".jsonl")):
        with open(path, encoding="utf-8") as f:
            return load_snapshot(f)
    table = StateTable(getattr(args, "epoch_us", None),
                       int(getattr(args, "bin_width_s", 600) * 1_000_000))
    with open(path, "rb") as f:
        reader = read_records(f, getattr(args, "policy", "strict"))
        table.ingest_many(reader)
    if reader.skipped:
        print(f"skipped {reader.skipped} malformed rows", file=sys.stderr)
    return table


def _write_json(path, obj) -> None:
    with atomic_write(path) as f:
        json.dump(obj, f, indent=2, default=str)
        f.write("\n")


def _write_text(path, text: str) -> None:
    with atomic_write(path) as f:
        f.write(text)


# --- subcommands -------------------------------------------------------------

def cmd_ingest(args) -> int:
    table = load_table(args.input, args)
    with atomic_write(args.out) as f:
        dump_snapshot(table, f)
    print(f"{table.record_count} records, {len(table)} IPs")
    return 0


def cmd_classify(args) -> int:
    table = load_table(args.input, args)
    report = stability.summarize(table, args.adjacency)
    doc = report.to_dict()
    doc["config"] = _effective_config(args)
    _write_json(args.out, doc)
    if args.csv:
        _write_text(args.csv, report.to_csv())
    return 0


def cmd_dist(args) -> int:
    table = load_table(args.input, args)
    d = distributions.build(table, args.domain, args.counting, args.family)
    with atomic_write(args.out) as f:
        d.to_csv(f)
    for value, share in distributions.top_k(d, args.top_k):
        print(f"{value},{share:.6f}")
    return 0


def cmd_collide(args) -> int:
    if args.flow:
        if args.n is None:
            raise argparse.ArgumentTypeError("--flow needs --n")
        p = distributions.flow_collision(args.n, args.ports)
        result = {"kind": "flow", "n": args.n, "ports": args.ports, "probability": p,
                  "saturated": distributions.flow_collision_saturated(args.n, args.ports)}
    else:
        if not args.input:
            raise argparse.ArgumentTypeError("collide needs --flow or --in")
        table = load_table(args.input, args)
        d = distributions.build(table, args.domain, args.counting, args.family)
        ns = [args.n] if args.n is not None else [0, 1, 2]
        result = {"kind": "distribution", "domain": args.domain, "counting": args.counting,
                  "rows": [{"n": n, "exact": distributions.collision_exact(d, n),
                            "window": distributions.collision_window(d, n)} for n in ns]}
    result["config"] = _effective_config(args)
    if args.out:
        _write_json(args.out, result)
    if args.flow:
        print(f"{result['probability']:.6f}")
    else:
        for row in result["rows"]:
            print(f"n={row['n']} exact={row['exact']:.6f} window={row['window']:.6f}")
    return 0


def cmd_amplitude(args) -> int:
    table = load_table(args.input, args)
    rows = stability.amplitude_rows(table, args.adjacency)
    with atomic_write(args.out) as f:
        f.write("ip,family,leaf,ttl_amplitude,hc_amplitude\n")
        for r in sorted(rows):
            f.write(",".join(map(str, r)) + "\n")
    if args.ecdf:
        # ECDF plot data per (family, leaf, metric)
        groups: dict = {}
        for _, fam, leaf, ta, ha in rows:
            for metric, v in (("ttl", ta), ("hc", ha)):
                groups.setdefault((fam, leaf, metric), Counter())[v] += 1
                groups.setdefault((fam, "all", metric), Counter())[v] += 1
        with atomic_write(args.ecdf) as f:
            f.write("family,group,metric,amplitude,ecdf\n")
            for key in sorted(groups):
                c = groups[key]
                total = sum(c.values())
                run = 0
                for v in sorted(c):
                    run += c[v]
                    f.write(f"{key[0]},{key[1]},{key[2]},{v},{run / total!r}\n")
    return 0


def cmd_detect(args) -> int:
    table = load_table(args.input, args)
    geo = None
    if args.geo:
        with open(args.geo, encoding="utf-8") as f:
            geo = anomaly.GeoLookup(anomaly.load_geo_table(f))
    policy = anomaly.FlagPolicy(args.min_combined_share, args.min_single_packet_ratio)
    results = anomaly.detect(table, args.window_bins, args.threshold, args.warmup_bins,
                             args.top_k, policy, geo)
    doc = anomaly.detection_json(results, _effective_config(args))
    _write_json(args.out, doc)
    flagged = [r for r in results if r.flag.flagged]
    for r in results:
        print(f"bins {r.window.first_bin}-{r.window.last_bin} new={r.window.new_ip_count} "
              f"ratio={r.window.new_ip_ratio:.3f} flagged={r.flag.flagged}")
    if args.excise_out:
        drop = {b for r in flagged for b in r.window.bins}
        with atomic_write(args.excise_out) as f:
            dump_snapshot(excise_bins(table, drop), f)
    return 0


def cmd_verdict(args) -> int:
    table = load_table(args.state, args)
    leaves = frozenset(args.leaves.split(",")) if args.leaves else None
    policy = anomaly.VerdictPolicy(args.basis, args.n, leaves, args.subnet_fallback)
    verifier = anomaly.Verifier(table, policy)
    stdin = sys.stdin.buffer if hasattr(sys.stdin, "buffer") else sys.stdin
    tally = anomaly.write_verdicts(read_records(stdin, args.policy), verifier, sys.stdout)
    print(json.dumps(dict(tally)), file=sys.stderr)
    return 0


def cmd_pingback(args) -> int:
    with open(args.targets, encoding="utf-8") as t, open(args.replies, encoding="utf-8") as r:
        state = pingback.ingest_probes(t, r, args.offset)
    doc = {
        "config": _effective_config(args),
        "responsive_ips": len(state.responsive()),
        "quarantined_replies": len(state.quarantine),
        "run_ttl_counts": {str(k): v for k, v in sorted(pingback.run_ttl_counts(state).items())},
        "longitudinal": pingback.longitudinal_summary(state),
    }
    if args.passive:
        table = load_table(args.passive, args)
        multi = [ip for ip, s in table.items() if len(s.distinct_ttls) > 1]
        doc["cross"] = pingback.cross_correlate(multi, state).to_dict()
    _write_json(args.out, doc)
    return 0


def _host_hcs_from_table(table: StateTable) -> dict[str, int]:
    # Hop Count of the IP's most frequent TTL (smaller TTL on ties)
    out = {}
    for ip, s in table.items():
        hist = s.ttl_histogram
        ttl = min(hist, key=lambda t: (-hist[t], t))
        out[ip] = HOP_COUNT[ttl]
    return out


def cmd_subnet(args) -> int:
    if args.hosts:
        hosts = {}
        with open(args.hosts, encoding="utf-8") as f:
            for i, line in enumerate(f, start=1):
                line = line.strip()
                if not line or (i == 1 and line.startswith("ip,")):
                    continue
                ip, hc = line.split(",")
                hosts[ip] = int(hc)
    else:
        hosts = _host_hcs_from_table(load_table(args.input, args))
    rows = subnets.subnet_stats(hosts, args.prefix_len, args.v6_prefix_len)
    with atomic_write(args.out) as f:
        subnets.write_subnet_csv(rows, f)
    return 0


def cmd_bgp(args) -> int:
    table = load_table(args.input, args)
    with open(args.rib, encoding="utf-8") as f:
        rib = subnets.read_rib(f)
    means = subnets.mean_hc_per_prefix(table, rib)
    points = subnets.prefix_points(means)
    result = subnets.regress(points)
    doc = result.to_dict()
    doc["config"] = _effective_config(args)
    _write_json(args.out, doc)
    if args.points:
        with atomic_write(args.points) as f:
            f.write("as_path_len,mean_hc\n")
            for x, y in points:
                f.write(f"{x},{y!r}\n")
    print(f"slope={result.slope:.4f} intercept={result.intercept:.4f} "
          f"r2={result.r_squared:.4f} p={result.p_value:.3g}")
    return 0


def cmd_synth(args) -> int:
    with open(args.spec, encoding="utf-8") as f:
        spec_doc = json.load(f)
    if args.seed is not None:
        spec_doc["seed"] = args.seed
    spec = synth.ScenarioSpec.from_dict(spec_doc)
    paths = synth.write_outputs(spec, args.out_dir, args.stem)
    for k, v in paths.items():
        print(f"{k}: {v}")
    return 0


# --- parser --------------------------------------------------------------------

def _add_table_opts(p, input_required=True):
    p.add_argument("--in", dest="input", required=input_required,
                   help="record CSV or NDJSON snapshot")
    p.add_argument("--epoch-us", type=int, default=None,
                   help="bin epoch (default: first record rounded down to a bin)")
    p.add_argument("--bin-width-s", type=int, default=DEFAULT_BIN_WIDTH_US // 1_000_000)
    p.add_argument("--policy", choices=("strict", "skip"), default="strict",
                   help="malformed-row handling")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttlscope", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with option overrides")
    parser.add_argument("--error-json", action="store_true",
                        help="print errors as JSON on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a state snapshot from records")
    _add_table_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("classify", help="stability decision-tree report")
    _add_table_opts(p)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--adjacency", choices=(stability.ACTIVITY, stability.WALLCLOCK),
                   default=stability.ACTIVITY)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("dist", help="empirical TTL / Hop Count distribution")
    _add_table_opts(p)
    p.add_argument("--out", required=True)
    p.add_argument("--domain", choices=(distributions.TTL, distributions.HOP), default="ttl")
    p.add_argument("--counting", choices=(distributions.PER_IP, distributions.PER_PACKET),
                   default="per_ip")
    p.add_argument("--family", choices=("v4", "v6"))
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("collide", help="collision probabilities")
    _add_table_opts(p, input_required=False)
    p.add_argument("--flow", action="store_true", help="4-flow port collision")
    p.add_argument("--n", type=int)
    p.add_argument("--ports", type=int, default=distributions.DEFAULT_PORTS)
    p.add_argument("--domain", choices=(distributions.TTL, distributions.HOP), default="ttl")
    p.add_argument("--counting", choices=(distributions.PER_IP, distributions.PER_PACKET),
                   default="per_ip")
    p.add_argument("--family", choices=("v4", "v6"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_collide)

    p = sub.add_parser("amplitude", help="TTL and Hop Count amplitudes per IP")
    _add_table_opts(p)
    p.add_argument("--out", required=True)
    p.add_argument("--ecdf", help="also write ECDF plot data here")
    p.add_argument("--adjacency", choices=(stability.ACTIVITY, stability.WALLCLOCK),
                   default=stability.ACTIVITY)
    p.set_defaults(func=cmd_amplitude)

    p = sub.add_parser("detect", help="accumulation spikes and TTL concentration")
    _add_table_opts(p)
    p.add_argument("--out", required=True)
    p.add_argument("--window-bins", type=int, default=anomaly.DEFAULT_WINDOW_BINS)
    p.add_argument("--threshold", type=float, default=anomaly.DEFAULT_SPIKE_THRESHOLD)
    p.add_argument("--warmup-bins", type=int, default=anomaly.DEFAULT_WARMUP_BINS)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--min-combined-share", type=float, default=0.99)
    p.add_argument("--min-single-packet-ratio", type=float, default=0.95)
    p.add_argument("--geo", help="prefix,country CSV")
    p.add_argument("--excise-out", help="write a snapshot with flagged bins removed")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("verdict", help="per-packet verdicts for records on stdin")
    p.add_argument("--state", required=True, help="learned state: record CSV or snapshot")
    p.add_argument("--epoch-us", type=int, default=None)
    p.add_argument("--bin-width-s", type=int, default=600)
    p.add_argument("--policy", choices=("strict", "skip"), default="strict")
    p.add_argument("--basis", choices=("ttl", "hop_count"), default="ttl")
    p.add_argument("--n", type=int, default=0)
    p.add_argument("--leaves", help="comma-separated stability leaves to learn from")
    p.add_argument("--subnet-fallback", type=int, help="prefix length for hop_count fallback")
    p.set_defaults(func=cmd_verdict)

    p = sub.add_parser("pingback", help="probe stability and passive cross-correlation")
    p.add_argument("--targets", required=True)
    p.add_argument("--replies", required=True)
    p.add_argument("--offset", type=int, default=pingback.DEFAULT_OFFSET)
    p.add_argument("--passive", help="passive record CSV or snapshot")
    p.add_argument("--epoch-us", type=int, default=None)
    p.add_argument("--bin-width-s", type=int, default=600)
    p.add_argument("--policy", choices=("strict", "skip"), default="strict")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pingback)

    p = sub.add_parser("subnet", help="Hop Count spread per equal-size subnet")
    _add_table_opts(p, input_required=False)
    p.add_argument("--hosts", help="ip,hop_count CSV (instead of --in)")
    p.add_argument("--prefix-len", type=int, default=24)
    p.add_argument("--v6-prefix-len", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subnet)

    p = sub.add_parser("bgp", help="mean Hop Count per prefix vs AS path length")
    _add_table_opts(p)
    p.add_argument("--rib", required=True, help="prefix,as_path_len CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--points", help="plot data CSV")
    p.set_defaults(func=cmd_bgp)

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    p.add_argument("--spec", required=True, help="scenario JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--stem", default="trace")
    p.set_defaults(func=cmd_synth)
    return parser


def _subparsers(parser) -> dict:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("--error-json", action="store_true")
    known, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if not a.startswith("-")), None)
    if known.config and command in _subparsers(parser):
        try:
            with open(known.config, encoding="utf-8") as f:
                overrides = json.load(f)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {known.config}: {exc}")
        sp = _subparsers(parser)[command]
        known_dests = {a.dest for a in sp._actions}
        cfg = {}
        for k, v in overrides.items():
            dest = k.replace("-", "_")
            if dest == "in":
                dest = "input"
            if dest not in known_dests:
                parser.error(f"unknown config key {k!r} for {command}")
            cfg[dest] = v
        sp.set_defaults(**cfg)
        for a in sp._actions:
            if a.dest in cfg:
                a.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        return _fail(args, "usage", str(exc), 2)
    except (ParseError, RecordBeforeEpoch, pingback.OffsetOverflow, synth.InfeasibleSpec,
            distributions.EmptyTable, subnets.DegenerateRegression, ValueError, OSError,
            KeyError, DataError) as exc:
        return _fail(args, type(exc).__name__, str(exc), 1)


def _fail(args, kind: str, message: str, code: int) -> int:
    if getattr(args, "error_json", False):
        print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    else:
        print(f"ttlscope: {kind}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
