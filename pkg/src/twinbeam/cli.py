"""Command-line entry point: ``twinbeam <subcommand> [--config F] [--seed N] [--out DIR] [--threads N]``.

Exit codes: 0 success, 1 invalid configuration or parameters, 2 runtime/IO failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config
from .errors import ConfigError, ParameterError
from . import experiments

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("twinbeam")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twinbeam", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="experiment .cfg file (default: shipped paper.cfg)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (results do not depend on it)")
        sp.add_argument("--n-shots", type=int, default=None, help="override shots per dataset")

    common(sub.add_parser("characterize", help="channel statistics, Fano factors, R, fitted t/eta/mu"))
    common(sub.add_parser("discriminate", help="bootstrap histograms, P_err vs batch size, ROC/AUC"))
    ks = sub.add_parser("keysim", help="decode random keys with mean / R / hybrid strategies")
    common(ks)
    ks.add_argument("--key-length", type=int, default=None)
    common(sub.add_parser("attack", help="intercept-resend sweep and detection crossings"))
    cal = sub.add_parser("calibrate", help="pulse-height gain calibration")
    common(cal)
    cal.add_argument("--trace", default=None, help="CSV of amplitudes (one per line) instead of a synthetic trace")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, threads=args.threads, n_shots=args.n_shots)
        if args.command == "characterize":
            summary = experiments.run_characterize(cfg, args.out)
        elif args.command == "discriminate":
            summary = experiments.run_discriminate(cfg, args.out)
        elif args.command == "keysim":
            summary = experiments.run_keysim(cfg, args.out, args.key_length)
        elif args.command == "attack":
            summary = experiments.run_attack(cfg, args.out)
        else:
            summary = experiments.run_calibrate(cfg, args.out, args.trace)
    except (ConfigError, ParameterError) as exc:
        print(f"twinbeam: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"twinbeam: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.verbose:
        print(json.dumps({k: v for k, v in summary.items() if k not in ("runs", "results")},
                         indent=2, default=str)[:4000])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
