"""Command line: ``run``, ``analyze`` and ``replay``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .errors import EngineError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epinet")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment and write its JSONL log")
    r.add_argument("--config", help="JSON or TOML config file (defaults if omitted)")
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=("networked", "independent"))
    r.add_argument("--backend", choices=("simulation", "external"))
    r.add_argument("--endpoint")
    r.add_argument("--workers", type=int)
    r.add_argument("--out", required=True)

    a = sub.add_parser("analyze", help="compute metrics from a run log")
    a.add_argument("--log", required=True)
    a.add_argument("--out", required=True)

    rp = sub.add_parser("replay", help="print the stores at a round barrier")
    rp.add_argument("--log", required=True)
    rp.add_argument("--round", type=int, required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _run(args) -> dict:
    from .runtime import ExperimentConfig, load_config, run_experiment

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        k: getattr(args, k)
        for k in ("seed", "mode", "backend", "endpoint", "workers")
        if getattr(args, k) is not None
    }
    cfg = replace(cfg, **overrides).validate()
    result = run_experiment(cfg)
    result.log.write(args.out)
    return {"log": args.out, "digest": result.log.digest, "records": len(result.log.records)}


def _analyze(args) -> dict:
    from .analysis import analyze
    from .runtime import RunLog

    report = analyze(RunLog.load(args.log))
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2)
    return {"report": args.out, "duplication_rate": report["duplication_rate"], "coverage": report["coverage"]}


def _replay(args) -> dict:
    from dataclasses import asdict

    from .runtime import RunLog, replay

    view = replay(RunLog.load(args.log), args.round)
    return {
        "round": view.round,
        "digest": view.digest(),
        "registry": [asdict(view.profiles[a]) for a in sorted(view.profiles)],
        "archive": [view.papers[p].to_json() for p in view.acceptance_order],
    }


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    handlers = {"run": _run, "analyze": _analyze, "replay": _replay}
    try:
        out = handlers[args.command](args)
    except EngineError as e:
        print(json.dumps({"error": e.code, "message": str(e)}), file=sys.stderr)
        return 2
    except OSError as e:
        print(json.dumps({"error": "io_error", "message": str(e)}), file=sys.stderr)
        return 2
    print(json.dumps(out, indent=2))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
