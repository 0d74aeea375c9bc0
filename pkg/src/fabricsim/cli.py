"""``fabricsim`` command line: one subcommand per experiment.

Exit status 0 on success, 1 for usage or config errors, 2 when the run
itself fails.  Diagnostics go to stderr; stdout gets one summary line.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, config, kernels
from .consensus import latency_heatmap, write_heatmap_csv
from .engine import run_experiment_convergence, run_experiment_regret, run_experiment_scalability
from .gossip import write_trajectories_csv

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def version_string() -> str:
    """Package version, plus ``git describe`` when run from a checkout."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return __version__
    desc = out.stdout.strip()
    return f"{__version__}+{desc}" if out.returncode == 0 and desc else __version__


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Manifest:
    """``manifest.json`` written at start (status "running") and rewritten
    at the end, so an interrupted run is evident."""

    def __init__(self, out_dir: Path, command: str, cfg: dict):
        self.path = out_dir / "manifest.json"
        self.data = {"command": command, "status": "running", "version": version_string(),
                     "backend": kernels.BACKEND, "master_seed": cfg["seed"], "started": _now(),
                     "finished": None, "wall_clock_s": None, "outputs": [], "config": cfg}
        self._t0 = time.perf_counter()
        self._dump()

    def _dump(self):
        tmp = self.path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.path)

    def finish(self, outputs: list[str], status: str = "ok", error: str | None = None):
        self.data.update(status=status, finished=_now(), outputs=sorted(outputs),
                         wall_clock_s=round(time.perf_counter() - self._t0, 3))
        if error:
            self.data["error"] = error
        self._dump()


# -- subcommands -----------------------------------------------------------------

def _threads(cfg: dict) -> int:
    return int(cfg["threads"] or os.cpu_count() or 1)


def cmd_heatmap(cfg: dict, out: Path) -> list[str]:
    sec = cfg["heatmap"]
    n_grid, pf_grid, reps = sec["n_grid"], sec["pf_grid"], cfg["replications"] or sec["reps"]
    if not n_grid or not pf_grid:
        raise config.ConfigError("heatmap grids must be non-empty")
    if any(not isinstance(n, int) or n < 1 for n in n_grid):
        raise config.ConfigError(f"heatmap.n_grid must hold positive integers, got {n_grid}")
    if any(not isinstance(p, (int, float)) or not 0.0 <= p <= 1.0 for p in pf_grid):
        raise config.ConfigError(f"heatmap.pf_grid must lie in [0, 1], got {pf_grid}")
    if int(reps) < 1:
        raise config.ConfigError("heatmap.reps must be >= 1")
    costs = config.scenario_config(cfg).costs
    values = latency_heatmap(n_grid, pf_grid, int(reps), int(cfg["seed"]), costs)
    write_heatmap_csv(out / "heatmap.csv", n_grid, pf_grid, values, int(reps))
    print(f"heatmap: {len(n_grid)}x{len(pf_grid)} cells, {reps} reps -> {out / 'heatmap.csv'}")
    return ["heatmap.csv"]


def cmd_gossip(cfg: dict, out: Path) -> list[str]:
    sec = cfg["gossip"]
    n_list, thr, reps = sec["n_list"], sec["threshold"], cfg["replications"] or sec["reps"]
    if not n_list or any(not isinstance(n, int) or n < 1 for n in n_list):
        raise config.ConfigError(f"gossip.n_list must hold positive integers, got {n_list}")
    if thr is not None and not (isinstance(thr, (int, float)) and 0.0 < thr < 1.0):
        raise config.ConfigError(f"gossip.threshold must lie in (0, 1), got {thr}")
    summary = write_trajectories_csv(out / "gossip.csv", n_list, int(reps), int(cfg["seed"]), thr)
    rounds = ", ".join(f"n={s['n']}: {s['rounds']}" for s in summary)
    print(f"gossip: rounds to dissemination {rounds} -> {out / 'gossip.csv'}")
    return ["gossip.csv"]


def cmd_convergence(cfg: dict, out: Path) -> list[str]:
    sec = cfg["convergence"]
    sc = config.scenario_config(cfg, "convergence")
    log = run_experiment_convergence(sc, policies=config.policies(sec["policies"]),
                                     log_every=int(sec["log_every"]), threads=_threads(cfg))
    files = []
    for table in ("selection", "probability", "summary"):
        name = f"convergence_{table}.csv"
        log.write_csv(table, out / name)
        files.append(name)
    print(f"convergence: {sc.replications} replications x {len(sec['policies'])} policies -> {out}")
    return files


def cmd_regret(cfg: dict, out: Path) -> list[str]:
    sec = cfg["regret"]
    sc = config.scenario_config(cfg, "regret")
    log = run_experiment_regret(sc, [int(t) for t in sec["t_train_grid"]], [int(n) for n in sec["n_ch_grid"]],
                                operate_slots=int(sec["operate_slots"]),
                                policies=config.policies(sec["policies"]), threads=_threads(cfg))
    log.write_csv("summary", out / "regret.csv")
    log.write_csv("replications", out / "regret_replications.csv")
    print(f"regret: {len(log.tables['summary'])} cells, {sc.replications} replications -> {out / 'regret.csv'}")
    return ["regret.csv", "regret_replications.csv"]


def cmd_scalability(cfg: dict, out: Path) -> list[str]:
    sec = cfg["scalability"]
    sc = config.scenario_config(cfg, "scalability")
    log = run_experiment_scalability(sc, [int(n) for n in sec["n_clients_grid"]],
                                     policies=config.policies(sec["policies"]), threads=_threads(cfg))
    log.write_csv("summary", out / "scalability.csv")
    log.write_csv("replications", out / "scalability_replications.csv")
    print(f"scalability: {len(log.tables['summary'])} cells, {sc.replications} replications "
          f"-> {out / 'scalability.csv'}")
    return ["scalability.csv", "scalability_replications.csv"]


COMMANDS = {"heatmap": cmd_heatmap, "gossip": cmd_gossip, "convergence": cmd_convergence,
            "regret": cmd_regret, "scalability": cmd_scalability}


# -- argument handling ----------------------------------------------------------

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    d = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", default=d, help="YAML config file")
    p.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS if suppress else "out",
                   help="output directory (default: ./out)")
    p.add_argument("--seed", type=int, metavar="U64", default=d, help="master seed")
    p.add_argument("--threads", type=int, metavar="N", default=d, help="worker threads for replications")
    p.add_argument("--replications", type=int, metavar="N", default=d,
                   help="override the experiment's replication (or rep) count")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fabricsim", parents=[_global_flags(False)],
                     description="Bandit channel selection on a simulated permissioned blockchain.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    flags = _global_flags(True)
    sub.add_parser("heatmap", parents=[flags], help="mean latency over (peers, p_f)")
    g = sub.add_parser("gossip", parents=[flags], help="gossip dissemination trajectories")
    g.add_argument("--n-list", type=int, nargs="+", metavar="N", help="peer counts")
    g.add_argument("--threshold", type=float, help="uninformed-fraction threshold (default 1/n)")
    sub.add_parser("convergence", parents=[flags], help="policy convergence on one network")
    sub.add_parser("regret", parents=[flags], help="regret against training length and channel count")
    sub.add_parser("scalability", parents=[flags], help="latency and throughput against client count")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    flags = {"seed": args.seed, "threads": args.threads, "replications": args.replications}
    if args.command == "gossip":
        flags["gossip"] = {k: v for k, v in (("n_list", args.n_list), ("threshold", args.threshold))
                           if v is not None}
    try:
        cfg = config.resolve(args.config, flags)
        if cfg["replications"] is not None and int(cfg["replications"]) < 1:
            raise config.ConfigError("--replications must be >= 1")
        if cfg["threads"] is not None and int(cfg["threads"]) < 1:
            raise config.ConfigError("--threads must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = Manifest(out, args.command, cfg)
    except config.ConfigError as exc:
        print(f"fabricsim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"fabricsim: cannot write to output directory {args.out!r}: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        outputs = COMMANDS[args.command](cfg, out)
    except config.ConfigError as exc:
        manifest.finish([], status="config_error", error=str(exc))
        print(f"fabricsim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any failure of the run maps to exit 2
        manifest.finish([], status="failed", error=f"{type(exc).__name__}: {exc}")
        print(f"fabricsim {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest.finish(outputs + ["manifest.json"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
