"""Command line entry point.

    geoquad {metric|pulse|evolve|noise|experiment} --config FILE [--out-dir DIR]
            [--seed N] [--threads N] [--angular-factor {1,2pi}]

Model, pulse and noise settings from the config can be overridden with
flags (``--model``, ``--param``, ``--protocol``, ``--t-f``, ``--eps0``,
``--eps-f``, ``--t2``, ``--grid``). Without ``--config`` the built-in
defaults of ``--kind`` are used.

Exit status is 0 on success, 1 for configuration or I/O problems and 2 for
numerical failures (including runs where some grid cells failed).
"""

import argparse
import csv
import logging
import os
import sys

from .exceptions import ConfigError, GeoQuadError
from .harness.config import (
    ANGULAR_FACTORS,
    KINDS,
    PROTOCOL_NAMES,
    Axis,
    check_writable,
    from_mapping,
    load_config,
)
from .harness.experiments import RUNNERS, run_metric, run_population_trace, run_pulse
from .harness.report import emit
from .models import MODEL_NAMES
from .pulse import sampled_pulse

log = logging.getLogger("geoquad")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

_EVOLVE_KINDS = ("fig2_two_level", "fig3_6x6", "fig5_grids", "fig7_optimal_time", "pop_trace", "custom")
_NOISE_KINDS = ("fig6_quasistatic", "fig8_miscal")


def build_parser():
    parser = argparse.ArgumentParser(prog="geoquad", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "metric": "quantum metric, Berry curvature and gap along the detuning",
        "pulse": "synthesize pulse shapes for the configured protocols",
        "evolve": "transfer-error grids, optimal-time sweeps and population traces",
        "noise": "quasistatic detuning noise and miscalibration studies",
        "experiment": "run whatever experiment kind the config names",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        if name == "noise":
            p.add_argument("study", nargs="?", choices=("quasistatic", "miscal"),
                           help="pick the study when no config is given")
        p.add_argument("--config", help="TOML experiment config")
        p.add_argument("--kind", choices=KINDS, help="start from the built-in defaults of this kind")
        p.add_argument("--out-dir", help="output directory (overrides output.dir)")
        p.add_argument("--out", help="path of the CSV output; other formats share its stem")
        p.add_argument("--seed", type=_u64, help="random seed for sampled noise")
        p.add_argument("--threads", type=int, help="worker processes (default: available cores)")
        p.add_argument("--angular-factor", choices=sorted(ANGULAR_FACTORS),
                       help="multiply Hamiltonians by 1 or 2pi")
        p.add_argument("--format", action="append", choices=("csv", "json", "svg"),
                       help="restrict outputs to these formats (repeatable)")
        p.add_argument("--model", choices=MODEL_NAMES, help="model name (overrides [model] name)")
        p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                       help="model parameter override (repeatable)")
        p.add_argument("--protocol", action="append", choices=(*PROTOCOL_NAMES, "sw"),
                       help="pulse protocol (repeatable)")
        p.add_argument("--t-f", type=float, help="pulse time in ns")
        p.add_argument("--eps0", type=float, help="initial detuning")
        p.add_argument("--eps-f", type=float, help="final detuning")
        p.add_argument("--t2", type=float, action="append", help="dephasing time in ns (repeatable)")
        if name == "metric":
            p.add_argument("--grid", help="detuning grid as MIN:MAX:COUNT (write --grid=-5:5:11 "
                           "when MIN is negative)")
        if name == "evolve":
            p.add_argument("--pulse", help="CSV with columns t and eps to evolve instead of "
                           "synthesizing pulses")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _params(pairs):
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--param expects KEY=VALUE, got {pair!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--param {key}: {value!r} is not a number") from None
    return out


def _grid(text):
    try:
        lo, hi, count = text.split(":")
        return Axis("eps", float(lo), float(hi), int(count))
    except ValueError:
        raise ConfigError(f"--grid expects MIN:MAX:COUNT, got {text!r}") from None


def _load(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        kind = args.kind
        if kind is None and getattr(args, "study", None):
            kind = {"quasistatic": "fig6_quasistatic", "miscal": "fig8_miscal"}[args.study]
        if kind is None:
            kind = "custom" if args.command in ("metric", "pulse", "evolve") else None
        if kind is None:
            raise ConfigError("pass --config FILE or --kind KIND")
        cfg = from_mapping({"kind": kind})
    over = {
        "out_dir": args.out_dir,
        "seed": args.seed,
        "threads": args.threads,
        "angular_factor": args.angular_factor,
        "formats": tuple(args.format) if args.format else None,
        "model": args.model,
        "t_f": args.t_f,
        "eps0": args.eps0,
        "eps_f": args.eps_f,
        "t2": tuple(args.t2) if args.t2 else None,
    }
    if args.protocol:
        over["protocols"] = tuple("sw_closed_form" if p == "sw" else p for p in args.protocol)
    if args.param:
        over["params"] = {**cfg.params, **_params(args.param)}
    if getattr(args, "grid", None):
        over["axes"] = (_grid(args.grid),)
    if args.out:
        stem = os.path.basename(args.out)
        over["stem"] = stem[:-4] if stem.endswith(".csv") else stem
        over["out_dir"] = os.path.dirname(args.out) or "."
    return cfg.with_overrides(**over)


def _read_pulse(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read pulse file {path}: {exc.strerror}") from None
    if not rows:
        raise ConfigError(f"pulse file {path} is empty")
    header = rows[0]
    eps_cols = [i for i, h in enumerate(header) if h == "eps" or h.startswith("eps_")]
    if "t" not in header or not eps_cols:
        raise ConfigError(f"pulse file {path} needs a 't' column and an 'eps' column")
    it, ie = header.index("t"), eps_cols[0]
    try:
        t = [float(r[it]) for r in rows[1:]]
        eps = [float(r[ie]) for r in rows[1:]]
        return sampled_pulse(t, eps)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"pulse file {path}: {exc}") from None


def _dispatch(command, cfg, args):
    named = cfg.stem is not None
    if command == "metric":
        return run_metric(cfg), cfg.name if named else f"{cfg.name}-metric"
    if command == "pulse":
        return run_pulse(cfg), cfg.name if named else f"{cfg.name}-pulse"
    if command == "evolve" and getattr(args, "pulse", None):
        report = run_population_trace(cfg, schedule=_read_pulse(args.pulse))
        return report, cfg.name if named else "trace"
    allowed = {"evolve": _EVOLVE_KINDS, "noise": _NOISE_KINDS}.get(command, KINDS)
    if cfg.kind not in allowed:
        raise ConfigError(f"'{command}' does not run experiments of kind {cfg.kind!r}; "
                          f"expected one of {allowed}")
    return RUNNERS[cfg.kind](cfg), cfg.name


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _load(args)
        check_writable(cfg.out_dir)
        report, stem = _dispatch(args.command, cfg, args)
        paths = emit(report, cfg.out_dir, stem, cfg.formats)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot write output: %s", exc)
        return EXIT_CONFIG
    except GeoQuadError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    for path in paths:
        log.info("wrote %s", path)
    seconds = report.timing.get("seconds")
    if seconds is not None:
        log.info("%s finished in %.1f s", stem, seconds)
    failures = report.metadata.get("failures", [])
    if failures:
        log.error("%d cell(s) failed; see metadata.failures in the JSON report", len(failures))
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
