"""Command line: ``coopkernel {run,verify,plot,diag}``.

Exit codes: 0 success, 1 failed verification, 2 invalid configuration,
3 aborted run (artifacts written so far are kept).
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import DEFAULTS, bundled_config, load_config
from .protocol import _jsonable
from .validation import ConfigurationError

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def _config_path(value):
    p = Path(value)
    if not p.exists() and bundled_config(value).exists():
        return bundled_config(value)
    return p


def _load(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["experiment"] = {"seed": args.seed}
    return load_config(_config_path(args.config), overrides)


def cmd_run(args):
    from .experiment import RunAborted, plan, run_experiment
    from .plots import plot_results

    cfg = _load(args)
    p = plan(cfg)
    if args.dry_run:
        print(f"experiment {p['name']} ({p['mode']})")
        print(f"  regimes: {', '.join(p['regimes'])}")
        print(f"  {p['param']}: {', '.join(f'{v:g}' for v in p['values'])}")
        print(f"  algorithms: {', '.join(p['algorithms'])}")
        print(f"  points: {p['points']}  seeds per point: {p['seeds_per_point']}  "
              f"total runs: {p['total_runs']}")
        return EXIT_OK
    out = Path(args.out or f"artifacts/{p['name']}")
    logging.info("writing %d runs to %s", p["total_runs"], out)
    try:
        run_experiment(cfg, out, workers=args.workers)
    except RunAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    for path in plot_results(out / "results.csv", out / "plots", p["name"]):
        print(path)
    print(out / "results.csv")
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_checks

    section = dict(DEFAULTS["instance"])
    if args.config:
        # read leniently: a malformed kernel table should be reported as a
        # failed invariant, not rejected before the checks run
        from .config import tomllib
        path = _config_path(args.config)
        try:
            raw = tomllib.loads(path.read_text())
        except OSError as exc:
            raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: TOML syntax error: {exc}") from exc
        section.update(raw.get("instance", {}))
    results = run_checks(section, tol_scale=args.tol_scale, trials=args.trials,
                         seed=args.seed or 0)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_plot(args):
    from .plots import plot_results

    out = Path(args.out or ".")
    csv_path = out / "results.csv"
    if not csv_path.exists():
        raise ConfigurationError(f"{csv_path}: no results to plot")
    name = out.name or "experiment"
    if args.config:
        name = _load(args).data["experiment"]["name"]
    for path in plot_results(csv_path, out / "plots", name):
        print(path)
    return EXIT_OK


def cmd_diag(args):
    from .experiment import diagnose

    cfg = _load(args)
    blocks = diagnose(cfg)
    text = json.dumps(_jsonable(blocks), indent=1, sort_keys=True)
    if args.out:
        path = Path(args.out) / "reports"
        path.mkdir(parents=True, exist_ok=True)
        (path / "diagnostics.json").write_text(text + "\n")
    print(text)
    bad = [b["instance"] for b in blocks if not all(b[k] for k in ("ok_a", "ok_b", "ok_c"))]
    return EXIT_OK if not bad else EXIT_VERIFY


def build_parser():
    parser = argparse.ArgumentParser(prog="coopkernel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required):
        p.add_argument("--config", required=config_required,
                       help="TOML experiment file (or the name of a bundled one)")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="artifact directory")
        p.add_argument("-v", "--verbose", action="store_true")

    run = sub.add_parser("run", help="run a sweep and write artifacts")
    common(run, True)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--dry-run", action="store_true", help="print the resolved grid and exit")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="oracle-equivalence checks")
    common(ver, False)
    ver.add_argument("--tol-scale", type=float, default=1.0,
                     help="multiply every tolerance by this factor")
    ver.add_argument("--trials", type=int, default=20)
    ver.set_defaults(func=cmd_verify)

    plot = sub.add_parser("plot", help="redraw figures from results.csv")
    common(plot, False)
    plot.set_defaults(func=cmd_plot)

    diag = sub.add_parser("diag", help="instance diagnostics for a config")
    common(diag, True)
    diag.set_defaults(func=cmd_diag)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
