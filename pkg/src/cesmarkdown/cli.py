"""Command-line interface.

Subcommands: ``simulate``, ``estimate``, ``bootstrap``, ``report`` and
``validate``.  Exit codes: 0 on success, 2 on a validation or configuration
failure, 3 on an estimation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import CesMarkdownError, ConfigurationError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ESTIMATION = 3

log = logging.getLogger("cesmarkdown")


def parse_steps(text: str) -> list[int]:
    """Parse ``"1..5"``, ``"1-3"`` or ``"1,2,3"`` into a list of step numbers."""
    text = text.strip()
    try:
        for sep in ("..", "-"):
            if sep in text:
                a, b = text.split(sep, 1)
                return list(range(int(a), int(b) + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse steps {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cesmarkdown", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic panel and its truth sidecar")
    s.add_argument("--config", help="JSON file with generator settings")
    s.add_argument("--seed", type=int, help="override the generator seed")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--name", default="panel.csv", help="file name of the panel (default panel.csv)")

    for name, help_ in (("estimate", "run the estimation pipeline"),
                        ("bootstrap", "run the pipeline with bootstrap replications")):
        e = sub.add_parser(name, help=help_)
        e.add_argument("--config", required=True, help="run configuration (JSON)")
        e.add_argument("--out", required=True, help="artifact directory")
        e.add_argument("--seed", type=int, help="override the optimizer (estimate) or bootstrap seed")
        e.add_argument("--steps", help="steps to run, e.g. 1..5 or 1..3")
        if name == "bootstrap":
            e.add_argument("--reps", type=int, required=True, help="wild bootstrap replications")
            e.add_argument("--theta-reps", type=int, default=0, help="pairs bootstrap replications for theta")
            e.add_argument("--jobs", type=int, default=1, help="parallel workers")

    r = sub.add_parser("report", help="rebuild report tables of an artifact directory")
    r.add_argument("--out", required=True, help="artifact directory with market_power.csv")
    r.add_argument("--config", help="run configuration overriding the one in the manifest")

    v = sub.add_parser("validate", help="check a panel CSV against the schema")
    v.add_argument("path", nargs="?", help="panel CSV (default: the input named in --config)")
    v.add_argument("--config", help="run configuration")
    return p


def _simulate(args) -> int:
    from .dgp import DgpConfig, simulate_panel, write_simulation

    data = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    cfg = DgpConfig.from_dict(data)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    sim = simulate_panel(cfg)
    csv, truth = write_simulation(sim, Path(args.out) / args.name)
    print(f"wrote {csv} and {truth} ({len(sim.frame)} rows, {sim.truth.redraws} redraws)")
    return EXIT_OK


def _run(args, bootstrap: bool) -> int:
    from .pipeline import RunConfig, run_pipeline

    cfg = RunConfig.load(args.config)
    updates = {}
    if args.steps:
        updates["steps"] = parse_steps(args.steps)
    if bootstrap:
        updates.update(bootstrap_reps=args.reps, theta_bootstrap_reps=args.theta_reps, n_jobs=args.jobs)
        if args.seed is not None:
            updates["bootstrap_seed"] = args.seed
    elif args.seed is not None:
        updates["seed"] = args.seed
    if updates:
        cfg = RunConfig.from_dict({**cfg.to_dict(), **updates})
    out = run_pipeline(cfg, args.out)
    print(f"outputs written to {out}")
    return EXIT_OK


def _report(args) -> int:
    from .pipeline import RunConfig, regenerate_reports

    cfg = RunConfig.load(args.config) if args.config else None
    files = regenerate_reports(args.out, cfg)
    print("rebuilt " + ", ".join(files))
    return EXIT_OK


def _validate(args) -> int:
    from .pipeline import RunConfig, read_panel

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    path = args.path or (cfg.input if args.config else None)
    if path is None:
        raise ConfigurationError("give a panel path or --config")
    frame = read_panel(path, cfg.column_map)
    cfg.check_columns(frame)
    print(f"{path}: {len(frame)} rows, {frame['plant_id'].nunique()} plants, "
          f"years {frame['year'].min()}-{frame['year'].max()}: ok")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"simulate": _simulate, "estimate": lambda a: _run(a, False), "bootstrap": lambda a: _run(a, True),
                "report": _report, "validate": _validate}
    try:
        return handlers[args.command](args)
    except (ValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CesMarkdownError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
